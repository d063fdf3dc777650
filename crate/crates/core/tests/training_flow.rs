//! Training engine contracts: null steps, freeze bit-identity, determinism,
//! checkpoint optimality and the ablation pairing, on synthetic fixtures.

use std::collections::HashMap;
use std::path::Path;

use porcelain_core::dataset::{
    generate_synthetic_dataset, load_manifest, split_dataset, AugmentSpec, SampleRecord, Split,
};
use porcelain_core::metrics::evaluate_model;
use porcelain_core::models::{build_model, Arch, ModelSpec};
use porcelain_core::taxonomy::build_taxonomy;
use porcelain_core::training::{
    configs_differ_only_in_transfer_flags, evaluate_loss, fit, read_epoch_log, run_ablation,
    train_epoch, Adam, TrainConfig,
};
use porcelain_core::weights::{export_backbone, load_checkpoint};
use porcelain_core::{Error, TaskTaxonomy};

fn synth_records(n: usize, seed: u64, dir: &Path, tax: &TaskTaxonomy) -> Vec<SampleRecord> {
    let manifest = generate_synthetic_dataset(n, seed, dir, tax).unwrap();
    load_manifest(&manifest, tax).unwrap()
}

fn tiny_config(arch: Arch, epochs: usize) -> TrainConfig {
    let mut spec = ModelSpec::new(arch);
    spec.input_side = 64;
    let mut config = TrainConfig::new(spec);
    config.epochs = epochs;
    config.augmentation = AugmentSpec::none();
    config
}

fn snapshot(model: &mut porcelain_core::models::MultiTaskModel) -> HashMap<String, Vec<f32>> {
    let mut map = HashMap::new();
    model.for_each_param(&mut |n, p| {
        map.insert(n, p.value.data().to_vec());
    });
    map
}

#[test]
fn zero_learning_rate_is_a_null_step() {
    let tax = build_taxonomy();
    let data_dir = tempfile::tempdir().unwrap();
    let records = synth_records(16, 5, data_dir.path(), &tax);
    let refs: Vec<&SampleRecord> = records.iter().collect();

    let config = tiny_config(Arch::Mobilenetv2, 1);
    let mut model = build_model(&config.spec, &tax, None).unwrap();
    let before = snapshot(&mut model);
    let mut opt = Adam::new(0.0);
    train_epoch(&mut model, &mut opt, &refs, &config, 1).unwrap();
    let after = snapshot(&mut model);
    for (name, b) in &before {
        assert_eq!(b, &after[name], "{name} changed under lr=0");
    }
}

#[test]
fn frozen_backbone_is_bit_identical_after_an_epoch() {
    let tax = build_taxonomy();
    let data_dir = tempfile::tempdir().unwrap();
    let weights_dir = tempfile::tempdir().unwrap();
    let records = synth_records(16, 6, data_dir.path(), &tax);
    let refs: Vec<&SampleRecord> = records.iter().collect();

    let mut donor = build_model(&tiny_config(Arch::Mobilenetv2, 1).spec, &tax, None).unwrap();
    export_backbone(&mut donor, &weights_dir.path().join("mobilenetv2.weights")).unwrap();

    let mut config = tiny_config(Arch::Mobilenetv2, 1);
    config.spec.pretrained = true;
    config.spec.freeze_backbone = true;
    let mut model = build_model(&config.spec, &tax, Some(weights_dir.path())).unwrap();
    let mut buffers_before = HashMap::new();
    model.for_each_buffer(&mut |n, t| {
        buffers_before.insert(n, t.data().to_vec());
    });
    let before = snapshot(&mut model);
    let mut opt = Adam::new(0.001);
    train_epoch(&mut model, &mut opt, &refs, &config, 1).unwrap();
    let after = snapshot(&mut model);

    let mut head_changed = [false; 4];
    for (name, b) in &before {
        if name.starts_with("backbone.") {
            assert_eq!(b, &after[name], "frozen backbone param {name} changed");
        } else {
            let task = porcelain_core::TASKS
                .iter()
                .position(|t| name.starts_with(&format!("heads.{t}")))
                .unwrap();
            if b != &after[name] {
                head_changed[task] = true;
            }
        }
    }
    assert!(head_changed.iter().all(|&c| c), "{head_changed:?}");
    // frozen batch-norm statistics stay fixed too
    model.for_each_buffer(&mut |n, t| {
        if n.starts_with("backbone.") {
            assert_eq!(t.data(), buffers_before[&n].as_slice(), "{n} drifted");
        }
    });
}

#[test]
fn non_finite_loss_aborts_with_batch_id() {
    let tax = build_taxonomy();
    let data_dir = tempfile::tempdir().unwrap();
    let records = synth_records(16, 8, data_dir.path(), &tax);
    let refs: Vec<&SampleRecord> = records.iter().collect();
    let config = tiny_config(Arch::Mobilenetv2, 1);
    let mut model = build_model(&config.spec, &tax, None).unwrap();
    model.for_each_param(&mut |n, p| {
        if n == "heads.dynasty.fc.weight" {
            p.value.fill(f32::INFINITY);
        }
    });
    let mut opt = Adam::new(0.001);
    let err = train_epoch(&mut model, &mut opt, &refs, &config, 1).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { batch: 0 }));
}

#[test]
fn fit_is_deterministic_and_checkpoints_the_minimum() {
    let tax = build_taxonomy();
    let data_dir = tempfile::tempdir().unwrap();
    let records = synth_records(20, 11, data_dir.path(), &tax);
    let splits = split_dataset(&records, 42).unwrap();
    let config = tiny_config(Arch::Mobilenetv2, 3);

    let out1 = tempfile::tempdir().unwrap();
    let out2 = tempfile::tempdir().unwrap();
    let a = fit(&config, &splits, &records, &tax, out1.path(), None).unwrap();
    let b = fit(&config, &splits, &records, &tax, out2.path(), None).unwrap();

    assert_eq!(a.run_id, b.run_id);
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_eq!(a.logs.len(), 3);
    for (la, lb) in a.logs.iter().zip(&b.logs) {
        assert_eq!(la.train, lb.train, "epoch {} train loss differs", la.epoch);
        assert_eq!(la.val, lb.val, "epoch {} val loss differs", la.epoch);
        assert_eq!(la.val_accuracy, lb.val_accuracy);
    }

    // best epoch owns the series minimum
    let min = a
        .logs
        .iter()
        .map(|l| l.val.total)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(a.best_val_loss, min);
    assert_eq!(
        a.logs[a.best_epoch - 1].val.total,
        min,
        "best epoch must hold the minimum"
    );

    // reloading the checkpoint reproduces the logged minimum validation loss
    let (mut reloaded, meta) = load_checkpoint(&a.run_dir, &tax).unwrap();
    assert_eq!(meta.best_epoch, a.best_epoch);
    let val_refs = splits.subset(&records, Split::Val).unwrap();
    let recomputed = evaluate_loss(&mut reloaded, &val_refs, &config).unwrap();
    let rel = (recomputed.total - a.best_val_loss).abs() / a.best_val_loss.max(1e-12);
    assert!(rel < 1e-5, "checkpoint val loss {} vs logged {}", recomputed.total, a.best_val_loss);

    // journal round trip; epoch indices contiguous from 1
    let journal = read_epoch_log(&a.run_dir.join("epochs.log")).unwrap();
    assert_eq!(journal.len(), a.logs.len());
    for (i, log) in journal.iter().enumerate() {
        assert_eq!(log.epoch, i + 1);
    }
    for (j, l) in journal.iter().zip(&a.logs) {
        assert_eq!(j.epoch, l.epoch);
        assert_eq!(j.train, l.train);
        assert_eq!(j.val, l.val);
        assert_eq!(j.val_accuracy, l.val_accuracy);
        assert_eq!(j.wall_seconds, l.wall_seconds);
    }

    // run directory layout
    for file in ["best.ckpt", "spec.txt", "epochs.log", "split.txt"] {
        assert!(a.run_dir.join(file).is_file(), "{file} missing");
    }

    // single-epoch fit selects epoch 1
    let config1 = tiny_config(Arch::Mobilenetv2, 1);
    let out3 = tempfile::tempdir().unwrap();
    let c = fit(&config1, &splits, &records, &tax, out3.path(), None).unwrap();
    assert_eq!(c.best_epoch, 1);
}

#[test]
fn running_best_is_monotone_non_increasing() {
    let tax = build_taxonomy();
    let data_dir = tempfile::tempdir().unwrap();
    let records = synth_records(20, 12, data_dir.path(), &tax);
    let splits = split_dataset(&records, 1).unwrap();
    let config = tiny_config(Arch::Mobilenetv2, 4);
    let out = tempfile::tempdir().unwrap();
    let artifact = fit(&config, &splits, &records, &tax, out.path(), None).unwrap();
    let mut best = f64::INFINITY;
    for log in &artifact.logs {
        let new_best = best.min(log.val.total);
        assert!(new_best <= best);
        best = new_best;
    }
    assert_eq!(best, artifact.best_val_loss);
}

#[test]
fn ablation_pairs_runs_and_isolates_flags() {
    let tax = build_taxonomy();
    let data_dir = tempfile::tempdir().unwrap();
    let weights_dir = tempfile::tempdir().unwrap();
    let records = synth_records(20, 13, data_dir.path(), &tax);
    let splits = split_dataset(&records, 7).unwrap();

    let base = tiny_config(Arch::Mobilenetv2, 2);
    let mut donor = build_model(&base.spec, &tax, None).unwrap();
    export_backbone(&mut donor, &weights_dir.path().join("mobilenetv2.weights")).unwrap();

    let out = tempfile::tempdir().unwrap();
    let outcome = run_ablation(
        &base,
        &splits,
        &records,
        &tax,
        out.path(),
        Some(weights_dir.path()),
    )
    .unwrap();

    // 2 runs x 4 tasks = 8 rows, both transfer flags present
    assert_eq!(outcome.rows.len(), 8);
    assert_eq!(outcome.rows.iter().filter(|r| r.transfer).count(), 4);
    assert_eq!(outcome.rows.iter().filter(|r| !r.transfer).count(), 4);

    // identical split membership on disk
    let s1 = std::fs::read(outcome.pretrained.run_dir.join("split.txt")).unwrap();
    let s2 = std::fs::read(outcome.scratch.run_dir.join("split.txt")).unwrap();
    assert_eq!(s1, s2);

    // configs differ in nothing but the transfer flags
    assert!(configs_differ_only_in_transfer_flags(
        &outcome.pretrained.config,
        &outcome.scratch.config
    ));
    assert!(outcome.pretrained.config.spec.pretrained);
    assert!(outcome.pretrained.config.spec.freeze_backbone);
    assert!(!outcome.scratch.config.spec.pretrained);
    assert!(!outcome.scratch.config.spec.freeze_backbone);

    // the frozen run's checkpointed backbone is bit-identical to the donor
    // archive across the whole fit
    let donor_entries =
        porcelain_core::weights::load_tensors(&weights_dir.path().join("mobilenetv2.weights"))
            .unwrap();
    let donor: HashMap<String, porcelain_core::Tensor> = donor_entries.into_iter().collect();
    let (mut reloaded, _) = load_checkpoint(&outcome.pretrained.run_dir, &tax).unwrap();
    let mut compared = 0usize;
    reloaded.for_each_param(&mut |name, p| {
        if let Some(stripped) = name.strip_prefix("backbone.") {
            assert_eq!(p.value, donor[stripped], "{name} drifted during the fit");
            compared += 1;
        }
    });
    reloaded.for_each_buffer(&mut |name, t| {
        if let Some(stripped) = name.strip_prefix("backbone.") {
            assert_eq!(*t, donor[stripped], "{name} statistics drifted during the fit");
            compared += 1;
        }
    });
    assert!(compared > 100);
}

#[test]
fn overfit_twelve_sample_train_split_to_perfect_accuracy() {
    let tax = build_taxonomy();
    let data_dir = tempfile::tempdir().unwrap();
    // 16 samples split 8:1:1 -> train split of exactly 12
    let records = synth_records(16, 9, data_dir.path(), &tax);
    let splits = split_dataset(&records, 3).unwrap();
    assert_eq!(splits.sizes(), (12, 1, 3));
    let train_refs = splits.subset(&records, Split::Train).unwrap();

    let mut config = tiny_config(Arch::Mobilenetv2, 80);
    config.seed = 21;
    let mut model = build_model(&config.spec, &tax, None).unwrap();
    let mut opt = Adam::new(config.learning_rate);
    let mut last = f64::INFINITY;
    for epoch in 1..=config.epochs {
        last = train_epoch(&mut model, &mut opt, &train_refs, &config, epoch)
            .unwrap()
            .total;
    }
    assert!(last < 0.05, "train loss should collapse, got {last}");

    let mut preprocess = config.preprocess();
    preprocess.augmentation = None;
    let reports = evaluate_model(&mut model, &train_refs, &preprocess).unwrap();
    for report in &reports {
        assert_eq!(
            report.accuracy, 1.0,
            "task {} not memorized: {}",
            report.task, report.accuracy
        );
        // with every task perfect, weighted recall equals accuracy equals 1
        assert!((report.recall - report.accuracy).abs() < 1e-12);
    }
}
