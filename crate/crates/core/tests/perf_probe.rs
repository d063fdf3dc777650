use std::time::Instant;

use porcelain_core::models::{build_model, Arch, ModelSpec};
use porcelain_core::objective::total_loss_with_grad;
use porcelain_core::taxonomy::build_taxonomy;
use porcelain_core::tensor::Tensor;
use porcelain_core::training::Adam;

#[test]
#[ignore]
fn probe_step_times() {
    let tax = build_taxonomy();
    for (arch, side, batch) in [
        (Arch::Mobilenetv2, 64usize, 32usize),
        (Arch::Resnet50, 64, 2),
        (Arch::Vgg16, 64, 2),
        (Arch::Inceptionv3, 75, 2),
    ] {
        let mut spec = ModelSpec::new(arch);
        spec.input_side = side;
        let mut model = build_model(&spec, &tax, None).unwrap();
        let mut opt = Adam::new(1e-3);
        let x = Tensor::full(&[batch, 3, side, side], 0.3);
        let targets = [vec![0; batch], vec![1; batch], vec![2; batch], vec![3; batch]];
        let t0 = Instant::now();
        let bundle = model.forward(&x, true).unwrap();
        let fwd = t0.elapsed();
        let (_, grads) = total_loss_with_grad(&bundle, &targets).unwrap();
        let t1 = Instant::now();
        model.zero_grad();
        model.backward(grads);
        opt.step(&mut model);
        let bwd = t1.elapsed();
        println!(
            "{:12} side={} batch={} forward={:?} backward+step={:?}",
            arch.name(),
            side,
            batch,
            fwd,
            bwd
        );
    }
}
