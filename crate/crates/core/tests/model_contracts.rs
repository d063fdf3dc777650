//! Whole-model contracts: head widths, freeze bookkeeping, checkpoint and
//! pretrained-archive round trips.

use porcelain_core::models::{build_model, Arch, ModelSpec, ARCHS};
use porcelain_core::taxonomy::build_taxonomy;
use porcelain_core::tensor::Tensor;
use porcelain_core::weights::{
    export_backbone, load_checkpoint, resolve_pretrained_path, save_checkpoint, CheckpointMeta,
};
use porcelain_core::Error;

fn small_spec(arch: Arch) -> ModelSpec {
    let mut spec = ModelSpec::new(arch);
    spec.input_side = arch.min_input_side();
    spec
}

#[test]
fn logit_widths_match_taxonomy_for_every_arch() {
    let tax = build_taxonomy();
    for arch in ARCHS {
        let spec = small_spec(arch);
        let mut model = build_model(&spec, &tax, None).unwrap();
        for batch in [1usize, 4] {
            let x = Tensor::full(&[batch, 3, spec.input_side, spec.input_side], 0.2);
            let bundle = model.forward(&x, false).unwrap();
            assert_eq!(bundle.widths(), [2, 10, 8, 12], "{arch}");
            assert_eq!(bundle.batch(), batch);
        }
    }
}

#[test]
fn identical_images_give_identical_logits_in_eval_mode() {
    let tax = build_taxonomy();
    let spec = small_spec(Arch::Mobilenetv2);
    let mut model = build_model(&spec, &tax, None).unwrap();
    let side = spec.input_side;
    let one: Vec<f32> = (0..3 * side * side).map(|i| ((i as f32) * 0.017).sin()).collect();
    let mut two = one.clone();
    two.extend_from_slice(&one);
    let x = Tensor::from_vec(&[2, 3, side, side], two);
    let bundle = model.forward(&x, false).unwrap();
    for t in 0..4 {
        let logits = bundle.task(t);
        let (_, k) = logits.dims2();
        for j in 0..k {
            assert_eq!(logits.data()[j], logits.data()[k + j], "task {t} col {j}");
        }
    }
}

#[test]
fn forward_rejects_mismatched_input_side() {
    let tax = build_taxonomy();
    let spec = small_spec(Arch::Vgg16);
    let mut model = build_model(&spec, &tax, None).unwrap();
    let x = Tensor::full(&[1, 3, spec.input_side + 8, spec.input_side + 8], 0.1);
    assert!(matches!(
        model.forward(&x, false),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn freeze_requires_pretrained() {
    let mut spec = ModelSpec::new(Arch::Resnet50);
    spec.freeze_backbone = true;
    spec.pretrained = false;
    assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
}

#[test]
fn input_below_backbone_minimum_rejected() {
    let mut spec = ModelSpec::new(Arch::Inceptionv3);
    spec.input_side = 64;
    assert!(spec.validate().is_err());
    spec.input_side = 75;
    assert!(spec.validate().is_ok());
}

#[test]
fn parameter_report_partitions_and_tracks_freezing() {
    let tax = build_taxonomy();
    let dir = tempfile::tempdir().unwrap();

    // scratch, unfrozen: everything trainable
    let spec = small_spec(Arch::Mobilenetv2);
    let mut model = build_model(&spec, &tax, None).unwrap();
    let report = model.parameter_report();
    let backbone = report.component("backbone").unwrap();
    assert!(backbone.trainable > 0);
    assert_eq!(backbone.frozen, 0);
    assert_eq!(report.total(), report.trainable_total());
    let sum: u64 = report.components.iter().map(|c| c.total()).sum();
    assert_eq!(sum, report.total());

    // stock a weights cache from this model, then build pretrained + frozen
    export_backbone(&mut model, &dir.path().join("mobilenetv2.weights")).unwrap();
    let mut frozen_spec = small_spec(Arch::Mobilenetv2);
    frozen_spec.pretrained = true;
    frozen_spec.freeze_backbone = true;
    let mut frozen = build_model(&frozen_spec, &tax, Some(dir.path())).unwrap();
    let report = frozen.parameter_report();
    let backbone = report.component("backbone").unwrap();
    assert_eq!(backbone.trainable, 0);
    assert!(backbone.frozen > 0);
    // trainable set is exactly the four heads
    let head_total: u64 = report
        .components
        .iter()
        .filter(|c| c.name.starts_with("head."))
        .map(|c| c.trainable)
        .sum();
    assert_eq!(report.trainable_total(), head_total);
    // conv head: 3x3x1280x512 conv + bn(512)*2 + fc(512K+K)
    let expected_head: u64 = 1280 * 512 * 9 + 1024 + (512 * 2 + 2) + (512 * 10 + 10) + (512 * 8 + 8) + (512 * 12 + 12) + 3 * (1280 * 512 * 9 + 1024);
    assert_eq!(head_total, expected_head);
}

#[test]
fn pretrained_weights_actually_load() {
    let tax = build_taxonomy();
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(Arch::Vgg16);
    let mut donor = build_model(&spec, &tax, None).unwrap();
    export_backbone(&mut donor, &dir.path().join("vgg16.weights")).unwrap();

    let mut pre_spec = small_spec(Arch::Vgg16);
    pre_spec.pretrained = true;
    pre_spec.init_seed = 999; // different init; loaded weights must win
    let mut loaded = build_model(&pre_spec, &tax, Some(dir.path())).unwrap();

    let mut donor_state = std::collections::HashMap::new();
    donor.for_each_param(&mut |n, p| {
        donor_state.insert(n, p.value.clone());
    });
    let mut checked = 0;
    loaded.for_each_param(&mut |n, p| {
        if n.starts_with("backbone.") {
            assert_eq!(p.value, donor_state[&n], "{n}");
            checked += 1;
        }
    });
    assert!(checked > 10);
}

#[test]
fn missing_pretrained_archive_is_weights_unavailable() {
    let tax = build_taxonomy();
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec(Arch::Resnet50);
    spec.pretrained = true;
    let err = match build_model(&spec, &tax, Some(dir.path())) {
        Err(e) => e,
        Ok(_) => panic!("expected WeightsUnavailable"),
    };
    assert!(matches!(err, Error::WeightsUnavailable { .. }));
    assert!(resolve_pretrained_path(Arch::Resnet50, Some(dir.path())).is_err());
}

#[test]
fn checkpoint_round_trip_and_fingerprint_guard() {
    let tax = build_taxonomy();
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(Arch::Mobilenetv2);
    let mut model = build_model(&spec, &tax, None).unwrap();
    let meta = CheckpointMeta {
        spec: spec.clone(),
        taxonomy_fingerprint: tax.fingerprint(),
        config_hash: "cafebabe".into(),
        best_epoch: 3,
        best_val_loss: 1.25,
    };
    save_checkpoint(&mut model, dir.path(), &meta).unwrap();

    let (mut reloaded, meta2) = load_checkpoint(dir.path(), &tax).unwrap();
    assert_eq!(meta, meta2);
    let mut original = std::collections::HashMap::new();
    model.for_each_param(&mut |n, p| {
        original.insert(n, p.value.clone());
    });
    reloaded.for_each_param(&mut |n, p| {
        assert_eq!(p.value, original[&n], "{n}");
    });

    // tampered fingerprint must be refused
    let sidecar = dir.path().join("spec.txt");
    let text = std::fs::read_to_string(&sidecar).unwrap();
    let tampered = text.replace(&tax.fingerprint(), "0000000000000000");
    std::fs::write(&sidecar, tampered).unwrap();
    assert!(matches!(
        load_checkpoint(dir.path(), &tax),
        Err(Error::TaxonomyMismatch { .. })
    ));
}

#[test]
fn unknown_arch_is_rejected() {
    assert!(matches!(
        Arch::parse("resnet99"),
        Err(Error::UnknownArch(_))
    ));
}
