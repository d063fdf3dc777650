//! Training protocol: epoch loop, best-checkpoint selection, the
//! pretrained-vs-scratch ablation, and loss-curve exports.

mod adam;

pub use adam::Adam;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::dataset::{
    load_batch, AugmentSpec, BatchMode, PreprocessSpec, SampleRecord, Split, SplitAssignment,
};
use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::metrics::{evaluate_model, MetricsReport};
use crate::models::{build_model, ModelSpec, MultiTaskModel};
use crate::objective::{total_loss, total_loss_with_grad, LossBreakdown, TaskTargets};
use crate::reports::ReportRow;
use crate::rng::Stream;
use crate::taxonomy::TaskTaxonomy;
use crate::weights::{save_checkpoint, CheckpointMeta};

/// Training protocol parameters. Defaults follow the reference protocol:
/// 50 epochs, batch 32, learning rate 0.001, flip/rotation augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub spec: ModelSpec,
    pub augmentation: AugmentSpec,
    pub deterministic: bool,
}

impl TrainConfig {
    pub fn new(spec: ModelSpec) -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.001,
            seed: 42,
            spec,
            augmentation: AugmentSpec::default(),
            deterministic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidSpec("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidSpec("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidSpec("learning_rate must be > 0".into()));
        }
        self.spec.validate()?;
        self.augmentation.validate()
    }

    pub fn preprocess(&self) -> PreprocessSpec {
        let mut p = PreprocessSpec::with_side(self.spec.input_side);
        p.augmentation = Some(self.augmentation);
        p
    }

    /// Canonical text form, hashed into run identifiers.
    pub fn canonical_string(&self, split_seed: u64) -> String {
        format!(
            "arch={};pretrained={};freeze={};input_side={};init_seed={};epochs={};batch={};lr={};seed={};flip={};rot={};det={};split_seed={}",
            self.spec.arch,
            self.spec.pretrained,
            self.spec.freeze_backbone,
            self.spec.input_side,
            self.spec.init_seed,
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.seed,
            self.augmentation.horizontal_flip_prob,
            self.augmentation.rotation_max_degrees,
            self.deterministic,
            split_seed
        )
    }

    pub fn run_id(&self, split_seed: u64) -> String {
        let mut h = ContentHash::new();
        h.update_str(&self.canonical_string(split_seed));
        format!(
            "{}_{}_{}",
            self.spec.arch,
            if self.spec.pretrained { "tl" } else { "scratch" },
            &h.hex()[..12]
        )
    }
}

/// One epoch's record in the training journal.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub val_accuracy: [f64; 4],
    pub wall_seconds: f64,
}

/// Everything a finished fit leaves behind.
pub struct TrainedArtifact {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub logs: Vec<EpochLog>,
    pub config: TrainConfig,
}

impl TrainedArtifact {
    /// Curve series in the shape the exporters expect.
    pub fn curve_series(&self) -> Vec<(usize, LossBreakdown, f64)> {
        self.logs
            .iter()
            .map(|l| (l.epoch, l.train, l.val.total))
            .collect()
    }
}

/// Runs one epoch of shuffled mini-batch optimization and returns the
/// epoch-mean loss breakdown over the training subset.
pub fn train_epoch(
    model: &mut MultiTaskModel,
    optimizer: &mut Adam,
    train_records: &[&SampleRecord],
    config: &TrainConfig,
    epoch: usize,
) -> Result<LossBreakdown> {
    let mut any_trainable = false;
    model.for_each_param(&mut |_, p| any_trainable |= p.trainable);
    if !any_trainable {
        return Err(Error::InvalidSpec("model has no trainable parameters".into()));
    }

    let preprocess = config.preprocess();
    let mut order: Vec<usize> = (0..train_records.len()).collect();
    let mut shuffle_rng = Stream::derive(config.seed, &format!("epoch-shuffle:{epoch}"));
    shuffle_rng.shuffle(&mut order);

    let mut epoch_sum = LossBreakdown::zero();
    let mut seen = 0usize;
    for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
        let records: Vec<&SampleRecord> = chunk.iter().map(|&i| train_records[i]).collect();
        let batch = load_batch(
            &records,
            &preprocess,
            BatchMode::Train {
                seed: config.seed,
                epoch,
            },
        )?;
        let targets = gather_targets(&records);
        let bundle = model.forward(&batch, true)?;
        let (breakdown, grads) = total_loss_with_grad(&bundle, &targets)?;
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteLoss { batch: batch_idx });
        }
        model.zero_grad();
        model.backward(grads);
        optimizer.step(model);
        epoch_sum.accumulate(&breakdown, records.len() as f64);
        seen += records.len();
    }
    epoch_sum.scale(1.0 / seen as f64);
    Ok(epoch_sum)
}

fn gather_targets(records: &[&SampleRecord]) -> TaskTargets {
    let mut targets: TaskTargets = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for r in records {
        for t in 0..4 {
            targets[t].push(r.labels[t]);
        }
    }
    targets
}

/// Mean loss over a subset in inference mode (no augmentation, no gradient).
pub fn evaluate_loss(
    model: &mut MultiTaskModel,
    records: &[&SampleRecord],
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    Ok(evaluate_split(model, records, config)?.0)
}

/// Mean loss and per-task accuracy over a subset in one inference pass.
pub fn evaluate_split(
    model: &mut MultiTaskModel,
    records: &[&SampleRecord],
    config: &TrainConfig,
) -> Result<(LossBreakdown, [f64; 4])> {
    let mut preprocess = config.preprocess();
    preprocess.augmentation = None;
    let mut sum = LossBreakdown::zero();
    let mut seen = 0usize;
    let mut correct = [0usize; 4];
    for chunk in records.chunks(config.batch_size) {
        let batch = load_batch(chunk, &preprocess, BatchMode::Eval)?;
        let targets = gather_targets(chunk);
        let bundle = model.forward(&batch, false)?;
        let breakdown = total_loss(&bundle, &targets)?;
        sum.accumulate(&breakdown, chunk.len() as f64);
        seen += chunk.len();
        for t in 0..4 {
            let logits = bundle.task(t);
            let (_, width) = logits.dims2();
            for (i, &target) in targets[t].iter().enumerate() {
                if crate::metrics::argmax(&logits.data()[i * width..(i + 1) * width]) == target {
                    correct[t] += 1;
                }
            }
        }
    }
    sum.scale(1.0 / seen as f64);
    let accuracy = correct.map(|c| c as f64 / seen as f64);
    Ok((sum, accuracy))
}

/// Runs the full protocol: sequential epochs, validation loss after each,
/// checkpointing whenever validation total loss strictly improves. The run
/// directory receives `best.ckpt`, `spec.txt`, `epochs.log` and `split.txt`.
pub fn fit(
    config: &TrainConfig,
    splits: &SplitAssignment,
    records: &[SampleRecord],
    taxonomy: &TaskTaxonomy,
    out_dir: &Path,
    weights_dir: Option<&Path>,
) -> Result<TrainedArtifact> {
    config.validate()?;
    let train_records = splits.subset(records, Split::Train)?;
    let val_records = splits.subset(records, Split::Val)?;
    if train_records.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if val_records.is_empty() {
        return Err(Error::EmptySplit("val".into()));
    }

    let run_id = config.run_id(splits.seed);
    let run_dir = out_dir.join(&run_id);
    std::fs::create_dir_all(&run_dir)
        .map_err(|e| Error::io(format!("creating {}", run_dir.display()), e))?;
    crate::dataset::write_split_file(splits, &run_dir.join("split.txt"))?;

    let mut model = build_model(&config.spec, taxonomy, weights_dir)?;
    let mut optimizer = Adam::new(config.learning_rate);

    let mut config_hash = ContentHash::new();
    config_hash.update_str(&config.canonical_string(splits.seed));
    let mut meta = CheckpointMeta {
        spec: config.spec.clone(),
        taxonomy_fingerprint: taxonomy.fingerprint(),
        config_hash: config_hash.hex(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };

    let journal_path = run_dir.join("epochs.log");
    let mut journal = std::fs::File::create(&journal_path)
        .map_err(|e| Error::io(format!("creating {}", journal_path.display()), e))?;
    writeln!(journal, "{}", JOURNAL_HEADER)
        .map_err(|e| Error::io("writing journal header", e))?;

    let mut logs: Vec<EpochLog> = Vec::with_capacity(config.epochs);
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let train = train_epoch(&mut model, &mut optimizer, &train_records, config, epoch)?;
        let (val, val_accuracy) = evaluate_split(&mut model, &val_records, config)?;
        let log = EpochLog {
            epoch,
            train,
            val,
            val_accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        writeln!(journal, "{}", render_journal_line(&log))
            .map_err(|e| Error::io("appending journal", e))?;
        journal
            .flush()
            .map_err(|e| Error::io("flushing journal", e))?;

        if val.total < best_val {
            best_val = val.total;
            best_epoch = epoch;
            meta.best_epoch = epoch;
            meta.best_val_loss = val.total;
            save_checkpoint(&mut model, &run_dir, &meta)?;
        }
        logs.push(log);
    }

    Ok(TrainedArtifact {
        run_id,
        run_dir,
        best_epoch,
        best_val_loss: best_val,
        logs,
        config: config.clone(),
    })
}

pub const JOURNAL_HEADER: &str = "epoch\twall_s\ttrain_total\tval_total\ttrain_dynasty\ttrain_ware\ttrain_glaze\ttrain_type\tval_dynasty\tval_ware\tval_glaze\tval_type\tacc_dynasty\tacc_ware\tacc_glaze\tacc_type";

fn render_journal_line(log: &EpochLog) -> String {
    let t = log.train.per_task();
    let v = log.val.per_task();
    let a = log.val_accuracy;
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        log.epoch,
        log.wall_seconds,
        log.train.total,
        log.val.total,
        t[0],
        t[1],
        t[2],
        t[3],
        v[0],
        v[1],
        v[2],
        v[3],
        a[0],
        a[1],
        a[2],
        a[3]
    )
}

/// Reloads an `epochs.log` journal.
pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading journal {}", path.display()), e))?;
    let mut logs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != JOURNAL_HEADER {
                return Err(Error::ParseError {
                    line: 1,
                    text: line.to_string(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 16 {
            return Err(Error::ParseError {
                line: idx + 1,
                text: line.to_string(),
            });
        }
        let f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::ParseError {
                line: idx + 1,
                text: s.to_string(),
            })
        };
        logs.push(EpochLog {
            epoch: parts[0].parse().map_err(|_| Error::ParseError {
                line: idx + 1,
                text: parts[0].to_string(),
            })?,
            wall_seconds: f(parts[1])?,
            train: LossBreakdown::from_parts([f(parts[4])?, f(parts[5])?, f(parts[6])?, f(parts[7])?]),
            val: LossBreakdown::from_parts([f(parts[8])?, f(parts[9])?, f(parts[10])?, f(parts[11])?]),
            val_accuracy: [f(parts[12])?, f(parts[13])?, f(parts[14])?, f(parts[15])?],
        });
    }
    Ok(logs)
}

/// Paired pretrained-vs-scratch outcome.
pub struct AblationOutcome {
    pub pretrained: TrainedArtifact,
    pub scratch: TrainedArtifact,
    pub rows: Vec<ReportRow>,
    pub pretrained_reports: Vec<MetricsReport>,
    pub scratch_reports: Vec<MetricsReport>,
}

/// Executes two fits differing only in the pretrained/freeze flags, same
/// seed and splits, and evaluates both best checkpoints on the test split.
pub fn run_ablation(
    base: &TrainConfig,
    splits: &SplitAssignment,
    records: &[SampleRecord],
    taxonomy: &TaskTaxonomy,
    out_dir: &Path,
    weights_dir: Option<&Path>,
) -> Result<AblationOutcome> {
    let mut with_transfer = base.clone();
    with_transfer.spec.pretrained = true;
    with_transfer.spec.freeze_backbone = true;
    let mut from_scratch = base.clone();
    from_scratch.spec.pretrained = false;
    from_scratch.spec.freeze_backbone = false;
    debug_assert!(configs_differ_only_in_transfer_flags(&with_transfer, &from_scratch));

    let pretrained = fit(&with_transfer, splits, records, taxonomy, out_dir, weights_dir)?;
    let scratch = fit(&from_scratch, splits, records, taxonomy, out_dir, weights_dir)?;

    let mut rows = Vec::new();
    let pretrained_reports =
        evaluate_artifact(&pretrained, splits, records, taxonomy, &mut rows)?;
    let scratch_reports = evaluate_artifact(&scratch, splits, records, taxonomy, &mut rows)?;

    Ok(AblationOutcome {
        pretrained,
        scratch,
        rows,
        pretrained_reports,
        scratch_reports,
    })
}

/// True when two configs are identical except for the pretrained/freeze pair.
pub fn configs_differ_only_in_transfer_flags(a: &TrainConfig, b: &TrainConfig) -> bool {
    let mut a_neutral = a.clone();
    a_neutral.spec.pretrained = false;
    a_neutral.spec.freeze_backbone = false;
    let mut b_neutral = b.clone();
    b_neutral.spec.pretrained = false;
    b_neutral.spec.freeze_backbone = false;
    a_neutral == b_neutral
}

/// Loads an artifact's best checkpoint, evaluates the test split and appends
/// one report row per task.
pub fn evaluate_artifact(
    artifact: &TrainedArtifact,
    splits: &SplitAssignment,
    records: &[SampleRecord],
    taxonomy: &TaskTaxonomy,
    rows: &mut Vec<ReportRow>,
) -> Result<Vec<MetricsReport>> {
    let test_records = splits.subset(records, Split::Test)?;
    if test_records.is_empty() {
        return Err(Error::EmptySplit("test".into()));
    }
    let (mut model, meta) = crate::weights::load_checkpoint(&artifact.run_dir, taxonomy)?;
    let mut preprocess = artifact.config.preprocess();
    preprocess.augmentation = None;
    let reports = evaluate_model(&mut model, &test_records, &preprocess)?;
    let best_log = artifact
        .logs
        .iter()
        .find(|l| l.epoch == meta.best_epoch)
        .unwrap_or_else(|| artifact.logs.last().expect("nonempty logs"));
    for (t, report) in reports.iter().enumerate() {
        rows.push(ReportRow {
            model: artifact.config.spec.arch.display_name().to_string(),
            task: report.task,
            transfer: artifact.config.spec.pretrained,
            val_accuracy: Some(best_log.val_accuracy[t]),
            test_accuracy: report.accuracy,
            balanced_accuracy: report.balanced_accuracy,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
        });
    }
    Ok(reports)
}
