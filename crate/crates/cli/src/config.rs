//! Experiment configuration: a flat key=value file with command-line
//! overrides. File values load first, then flags win key by key.

use std::path::{Path, PathBuf};

use porcelain_core::dataset::AugmentSpec;
use porcelain_core::models::{Arch, ModelSpec, ARCHS};
use porcelain_core::training::TrainConfig;
use porcelain_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub archs: Vec<Arch>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub split_seed: u64,
    pub input_side: usize,
    pub pretrained: bool,
    pub freeze_backbone: bool,
    pub flip_prob: f32,
    pub rotation_max: f32,
    pub deterministic: bool,
    pub weights_dir: Option<PathBuf>,
    pub count: usize,
    pub run: Option<String>,
    pub parallel: bool,
    pub ablation: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: None,
            out: None,
            archs: ARCHS.to_vec(),
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.001,
            seed: 42,
            split_seed: 42,
            input_side: 224,
            pretrained: false,
            freeze_backbone: false,
            flip_prob: 0.5,
            rotation_max: 15.0,
            deterministic: true,
            weights_dir: None,
            count: 240,
            run: None,
            parallel: false,
            ablation: false,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::InvalidValue {
            key: key.to_string(),
            detail: format!("expected a boolean, got `{value}`"),
        }),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::InvalidValue {
        key: key.to_string(),
        detail: format!("cannot parse `{value}`"),
    })
}

impl ExperimentConfig {
    /// Applies one key=value assignment. Keys use underscores; dashes are
    /// accepted as aliases.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "out" => self.out = Some(PathBuf::from(v)),
            "arch" => {
                let mut archs = Vec::new();
                for part in v.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    let arch = Arch::parse(part).map_err(|_| Error::InvalidValue {
                        key: "arch".into(),
                        detail: format!(
                            "`{part}` is not one of resnet50, mobilenetv2, vgg16, inceptionv3"
                        ),
                    })?;
                    if !archs.contains(&arch) {
                        archs.push(arch);
                    }
                }
                if archs.is_empty() {
                    return Err(Error::InvalidValue {
                        key: "arch".into(),
                        detail: "architecture list is empty".into(),
                    });
                }
                self.archs = archs;
            }
            "epochs" => self.epochs = parse_num(&key, v)?,
            "batch_size" => self.batch_size = parse_num(&key, v)?,
            "learning_rate" => self.learning_rate = parse_num(&key, v)?,
            "seed" => self.seed = parse_num(&key, v)?,
            "split_seed" => self.split_seed = parse_num(&key, v)?,
            "input_side" => self.input_side = parse_num(&key, v)?,
            "pretrained" => self.pretrained = parse_bool(&key, v)?,
            "freeze_backbone" => self.freeze_backbone = parse_bool(&key, v)?,
            "flip_prob" => self.flip_prob = parse_num(&key, v)?,
            "rotation_max" => self.rotation_max = parse_num(&key, v)?,
            "deterministic" => self.deterministic = parse_bool(&key, v)?,
            "weights_dir" => self.weights_dir = Some(PathBuf::from(v)),
            "count" => self.count = parse_num(&key, v)?,
            "run" => self.run = Some(v.to_string()),
            "parallel" => self.parallel = parse_bool(&key, v)?,
            "ablation" => self.ablation = parse_bool(&key, v)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Training configuration for one architecture.
    pub fn train_config(&self, arch: Arch) -> TrainConfig {
        let mut spec = ModelSpec::new(arch);
        spec.pretrained = self.pretrained;
        spec.freeze_backbone = self.freeze_backbone;
        spec.input_side = self.input_side;
        spec.init_seed = self.seed;
        let mut config = TrainConfig::new(spec);
        config.epochs = self.epochs;
        config.batch_size = self.batch_size;
        config.learning_rate = self.learning_rate;
        config.seed = self.seed;
        config.augmentation = AugmentSpec {
            horizontal_flip_prob: self.flip_prob,
            rotation_max_degrees: self.rotation_max,
        };
        config.deterministic = self.deterministic;
        config
    }

    pub fn require_manifest(&self) -> Result<&Path> {
        self.manifest.as_deref().ok_or_else(|| Error::InvalidValue {
            key: "manifest".into(),
            detail: "required (set --manifest or manifest= in the config file)".into(),
        })
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::InvalidValue {
            key: "out".into(),
            detail: "required (set --out or out= in the config file)".into(),
        })
    }
}

/// Loads a flat key=value config file and applies overrides in order.
pub fn parse_config(
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(Error::ParseError {
                line: idx + 1,
                text: line.to_string(),
            })?;
            config.set(key, value)?;
        }
    }
    for (key, value) in overrides {
        config.set(key, value)?;
    }
    Ok(config)
}
