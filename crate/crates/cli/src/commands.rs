//! Command implementations behind the CLI front end.

use std::path::{Path, PathBuf};

use porcelain_core::dataset::{
    generate_synthetic_dataset, load_manifest, read_split_file, split_dataset, write_split_file,
    SampleRecord, Split, SplitAssignment,
};
use porcelain_core::metrics::evaluate_model;
use porcelain_core::reports::{
    read_report_rows, render_tables, write_confusion_matrix, write_curves, write_report_rows,
    ReportRow,
};
use porcelain_core::taxonomy::{build_taxonomy, TaskTaxonomy, TASKS};
use porcelain_core::training::{fit, read_epoch_log, run_ablation, TrainConfig};
use porcelain_core::weights::load_checkpoint;
use porcelain_core::{Error, Result};

use crate::config::ExperimentConfig;

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn load_records(config: &ExperimentConfig, taxonomy: &TaskTaxonomy) -> Result<Vec<SampleRecord>> {
    load_manifest(config.require_manifest()?, taxonomy)
}

/// Validates the manifest, writes the split file, the taxonomy export and
/// the per-task label histogram.
pub fn prepare(config: &ExperimentConfig) -> Result<()> {
    let taxonomy = build_taxonomy();
    let out = config.require_out()?;
    ensure_dir(out)?;
    let records = load_records(config, &taxonomy)?;
    let splits = split_dataset(&records, config.split_seed)?;
    write_split_file(&splits, &out.join("split.txt"))?;

    std::fs::write(out.join("taxonomy.txt"), taxonomy.export_text())
        .map_err(|e| Error::io("writing taxonomy.txt", e))?;

    let labels: Vec<[usize; 4]> = records.iter().map(|r| r.labels).collect();
    let hist = taxonomy.histogram(labels.iter());
    let mut text = String::new();
    for (t, task) in TASKS.iter().enumerate() {
        text.push_str(task.name());
        text.push('\n');
        for (i, count) in hist[t].iter().enumerate() {
            let name = taxonomy.decode_label(*task, i).expect("index in range");
            text.push_str(&format!("{i}\t{name}\t{count}\n"));
        }
        text.push('\n');
    }
    std::fs::write(out.join("histogram.txt"), text)
        .map_err(|e| Error::io("writing histogram.txt", e))?;

    let sizes = splits.sizes();
    println!(
        "prepared {} records: split {}/{}/{} (seed {}), wrote split.txt, taxonomy.txt, histogram.txt in {}",
        records.len(),
        sizes.0,
        sizes.1,
        sizes.2,
        config.split_seed,
        out.display()
    );
    Ok(())
}

/// Generates the synthetic fixture dataset.
pub fn synth(config: &ExperimentConfig) -> Result<()> {
    let taxonomy = build_taxonomy();
    let out = config.require_out()?;
    ensure_dir(out)?;
    let manifest = generate_synthetic_dataset(config.count, config.seed, out, &taxonomy)?;
    println!(
        "generated {} synthetic samples (seed {}) -> {}",
        config.count,
        config.seed,
        manifest.display()
    );
    Ok(())
}

fn splits_for(config: &ExperimentConfig, records: &[SampleRecord]) -> Result<SplitAssignment> {
    split_dataset(records, config.split_seed)
}

/// Trains one fit per requested architecture, sequentially by default or in
/// parallel threads with `--parallel true`.
pub fn train(config: &ExperimentConfig) -> Result<()> {
    let taxonomy = build_taxonomy();
    let out = config.require_out()?;
    ensure_dir(out)?;
    let records = load_records(config, &taxonomy)?;
    let splits = splits_for(config, &records)?;

    let jobs: Vec<TrainConfig> = config.archs.iter().map(|&a| config.train_config(a)).collect();
    let weights_dir = config.weights_dir.clone();

    let outcomes: Vec<Result<(String, usize, f64)>> = if config.parallel && jobs.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|job| {
                    let records = &records;
                    let splits = &splits;
                    let taxonomy = &taxonomy;
                    let weights_dir = weights_dir.clone();
                    scope.spawn(move || {
                        fit(job, splits, records, taxonomy, out, weights_dir.as_deref())
                            .map(|a| (a.run_id, a.best_epoch, a.best_val_loss))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("fit thread")).collect()
        })
    } else {
        jobs.iter()
            .map(|job| {
                fit(job, &splits, &records, &taxonomy, out, weights_dir.as_deref())
                    .map(|a| (a.run_id, a.best_epoch, a.best_val_loss))
            })
            .collect()
    };

    for outcome in outcomes {
        let (run_id, best_epoch, best_val) = outcome?;
        println!("trained {run_id}: best epoch {best_epoch}, val loss {best_val:.6}");
    }
    Ok(())
}

fn resolve_run_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    let run = config.run.as_deref().ok_or_else(|| Error::InvalidValue {
        key: "run".into(),
        detail: "required (set --run to a run id or checkpoint directory)".into(),
    })?;
    let direct = PathBuf::from(run);
    if direct.join("best.ckpt").is_file() {
        return Ok(direct);
    }
    if let Some(out) = &config.out {
        let nested = out.join(run);
        if nested.join("best.ckpt").is_file() {
            return Ok(nested);
        }
    }
    Err(Error::InvalidValue {
        key: "run".into(),
        detail: format!("no checkpoint found under `{run}`"),
    })
}

/// Merges rows into the accumulating report document, replacing rows with
/// the same (model, task, transfer) key so re-evaluation stays idempotent.
fn upsert_report_rows(path: &Path, new_rows: &[ReportRow]) -> Result<()> {
    let mut rows = if path.is_file() {
        read_report_rows(path)?
    } else {
        Vec::new()
    };
    for row in new_rows {
        match rows
            .iter_mut()
            .find(|r| r.model == row.model && r.task == row.task && r.transfer == row.transfer)
        {
            Some(existing) => *existing = row.clone(),
            None => rows.push(row.clone()),
        }
    }
    write_report_rows(path, &rows)
}

/// Evaluates a trained run's best checkpoint on its test split; writes
/// per-task confusion matrices, a per-run metrics table and updates the
/// accumulated report document.
pub fn evaluate(config: &ExperimentConfig) -> Result<()> {
    let taxonomy = build_taxonomy();
    let out = config.require_out()?;
    ensure_dir(out)?;
    let run_dir = resolve_run_dir(config)?;
    let records = load_records(config, &taxonomy)?;
    let splits = read_split_file(&run_dir.join("split.txt"))?;
    let test_records = splits.subset(&records, Split::Test)?;
    if test_records.is_empty() {
        return Err(Error::EmptySplit("test".into()));
    }

    let (mut model, meta) = load_checkpoint(&run_dir, &taxonomy)?;
    let mut preprocess =
        porcelain_core::dataset::PreprocessSpec::with_side(meta.spec.input_side);
    preprocess.augmentation = None;
    let reports = evaluate_model(&mut model, &test_records, &preprocess)?;

    // validation accuracy at the selected epoch, from the training journal
    let journal = read_epoch_log(&run_dir.join("epochs.log"))?;
    let best_log = journal.iter().find(|l| l.epoch == meta.best_epoch);

    let mut rows = Vec::new();
    for (t, report) in reports.iter().enumerate() {
        write_confusion_matrix(
            &run_dir.join(format!("confusion_{}.tsv", report.task)),
            &report.matrix,
            report.task,
            &taxonomy,
        )?;
        rows.push(ReportRow {
            model: meta.spec.arch.display_name().to_string(),
            task: report.task,
            transfer: meta.spec.pretrained,
            val_accuracy: best_log.map(|l| l.val_accuracy[t]),
            test_accuracy: report.accuracy,
            balanced_accuracy: report.balanced_accuracy,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
        });
    }
    let (by_task, _) = render_tables(&rows)?;
    std::fs::write(run_dir.join("metrics.txt"), &by_task)
        .map_err(|e| Error::io("writing metrics.txt", e))?;
    upsert_report_rows(&out.join("reports.tsv"), &rows)?;

    println!(
        "evaluated {} on {} test samples; wrote confusion matrices and metrics.txt in {}, updated {}",
        run_dir.display(),
        test_records.len(),
        run_dir.display(),
        out.join("reports.tsv").display()
    );
    Ok(())
}

/// Runs the pretrained-vs-scratch ablation per architecture.
pub fn compare(config: &ExperimentConfig) -> Result<()> {
    let taxonomy = build_taxonomy();
    let out = config.require_out()?;
    ensure_dir(out)?;
    let records = load_records(config, &taxonomy)?;
    let splits = splits_for(config, &records)?;

    for &arch in &config.archs {
        let base = config.train_config(arch);
        let outcome = run_ablation(
            &base,
            &splits,
            &records,
            &taxonomy,
            out,
            config.weights_dir.as_deref(),
        )?;
        let (_, transfer_table) = render_tables(&outcome.rows)?;
        let table_path = out.join(format!("ablation_{arch}.txt"));
        std::fs::write(&table_path, &transfer_table)
            .map_err(|e| Error::io(format!("writing {}", table_path.display()), e))?;

        let curves_path = out.join(format!("curves_{arch}.csv"));
        write_curves(
            &curves_path,
            &[
                ("pretrained".to_string(), outcome.pretrained.curve_series()),
                ("scratch".to_string(), outcome.scratch.curve_series()),
            ],
        )?;
        upsert_report_rows(&out.join("reports.tsv"), &outcome.rows)?;
        println!(
            "compared {arch}: pretrained best epoch {}, scratch best epoch {}; wrote {} and {}",
            outcome.pretrained.best_epoch,
            outcome.scratch.best_epoch,
            table_path.display(),
            curves_path.display()
        );
    }
    Ok(())
}

/// Renders the metric tables and merges all training journals into one
/// plottable curve file.
pub fn report(config: &ExperimentConfig) -> Result<()> {
    let out = config.require_out()?;
    let reports_path = out.join("reports.tsv");
    if !reports_path.is_file() {
        return Err(Error::EmptyReportSet);
    }
    let rows = read_report_rows(&reports_path)?;
    let (by_task, transfer) = render_tables(&rows)?;
    std::fs::write(out.join("table_by_task.txt"), &by_task)
        .map_err(|e| Error::io("writing table_by_task.txt", e))?;
    std::fs::write(out.join("table_transfer.txt"), &transfer)
        .map_err(|e| Error::io("writing table_transfer.txt", e))?;

    // merge every run journal under the output directory into one curve file
    let mut series = Vec::new();
    let mut run_dirs: Vec<PathBuf> = std::fs::read_dir(out)
        .map_err(|e| Error::io(format!("listing {}", out.display()), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join("epochs.log").is_file())
        .collect();
    run_dirs.sort();
    for dir in run_dirs {
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let logs = read_epoch_log(&dir.join("epochs.log"))?;
        series.push((
            label,
            logs.iter().map(|l| (l.epoch, l.train, l.val.total)).collect(),
        ));
    }
    if !series.is_empty() {
        write_curves(&out.join("curves.csv"), &series)?;
    }
    println!(
        "wrote {} and {} ({} rows, {} curve series)",
        out.join("table_by_task.txt").display(),
        out.join("table_transfer.txt").display(),
        rows.len(),
        series.len()
    );
    Ok(())
}

