//! `porcelain` — reproducible multi-task porcelain classification experiments.

mod commands;
mod config;

use std::process::ExitCode;

use porcelain_core::Error;

use config::parse_config;

const USAGE: &str = "\
usage: porcelain <command> [--config FILE] [--key value ...]

commands:
  prepare    validate a manifest, write the split file and label histogram
  synth      generate the synthetic fixture dataset (--count, --seed, --out)
  train      fit one run per architecture (--manifest, --out, --arch ...)
  evaluate   score a run's best checkpoint on its test split (--run ...)
  compare    pretrained-vs-scratch ablation per architecture
  report     render metric tables and merged loss curves from --out

common keys (flag or config-file line):
  manifest, out, arch (comma list), epochs, batch_size, learning_rate,
  seed, split_seed, input_side, pretrained, freeze_backbone, flip_prob,
  rotation_max, deterministic, weights_dir, count, run, parallel

pretrained weight archives are looked up as <arch>.weights inside
--weights_dir or $PORCELAIN_WEIGHTS_DIR.";

fn run() -> Result<(), Error> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "help" || args[0] == "--help" || args[0] == "-h" {
        println!("{USAGE}");
        return Ok(());
    }

    let command = args[0].clone();
    let mut config_file = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut i = 1;
    while i < args.len() {
        let arg = &args[i];
        let key = arg.strip_prefix("--").ok_or_else(|| Error::InvalidValue {
            key: arg.clone(),
            detail: "expected a --key value pair".into(),
        })?;
        let value = args.get(i + 1).ok_or_else(|| Error::InvalidValue {
            key: key.to_string(),
            detail: "missing value".into(),
        })?;
        if key == "config" {
            config_file = Some(std::path::PathBuf::from(value));
        } else {
            overrides.push((key.to_string(), value.clone()));
        }
        i += 2;
    }

    let config = parse_config(config_file.as_deref(), &overrides)?;
    match command.as_str() {
        "prepare" => commands::prepare(&config),
        "synth" => commands::synth(&config),
        "train" => commands::train(&config),
        "evaluate" => commands::evaluate(&config),
        "compare" => commands::compare(&config),
        "report" => commands::report(&config),
        other => Err(Error::UnknownCommand(other.to_string())),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} msg=\"{}\"", e.kind(), e);
            ExitCode::FAILURE
        }
    }
}
