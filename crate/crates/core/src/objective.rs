//! Per-task cross-entropy and the summed multi-task objective.
//!
//! Each task contributes a batch-mean cross-entropy; the training objective
//! is their plain (unweighted) sum. Losses are accumulated in f64 so the
//! additivity identity holds well inside test tolerances; gradients stay in
//! f32 alongside the rest of the engine.

use crate::error::{Error, Result};
use crate::models::LogitsBundle;
use crate::taxonomy::TASKS;
use crate::tensor::Tensor;

/// Per-task losses plus their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub dynasty: f64,
    pub ware: f64,
    pub glaze: f64,
    pub typ: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn zero() -> Self {
        LossBreakdown {
            dynasty: 0.0,
            ware: 0.0,
            glaze: 0.0,
            typ: 0.0,
            total: 0.0,
        }
    }

    /// Components in canonical task order.
    pub fn per_task(&self) -> [f64; 4] {
        [self.dynasty, self.ware, self.glaze, self.typ]
    }

    pub fn from_parts(parts: [f64; 4]) -> Self {
        LossBreakdown {
            dynasty: parts[0],
            ware: parts[1],
            glaze: parts[2],
            typ: parts[3],
            total: parts.iter().sum(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.per_task().iter().all(|v| v.is_finite()) && self.total.is_finite()
    }

    /// Weighted accumulation helper for epoch means: `self += weight * other`.
    pub fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.dynasty += weight * other.dynasty;
        self.ware += weight * other.ware;
        self.glaze += weight * other.glaze;
        self.typ += weight * other.typ;
        self.total += weight * other.total;
    }

    pub fn scale(&mut self, factor: f64) {
        self.dynasty *= factor;
        self.ware *= factor;
        self.glaze *= factor;
        self.typ *= factor;
        self.total *= factor;
    }
}

fn check_targets(batch: usize, classes: usize, targets: &[usize]) -> Result<()> {
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if targets.len() != batch {
        return Err(Error::ShapeMismatch {
            expected: format!("{} targets", batch),
            got: format!("{}", targets.len()),
        });
    }
    for (i, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::TargetOutOfRange {
                index: t,
                classes,
                sample: i,
            });
        }
    }
    Ok(())
}

/// Batch-mean cross-entropy of `logits` (`[batch, classes]`) against integer
/// `targets`. Stabilized by max-subtraction, so any finite logits produce a
/// finite loss.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let (batch, classes) = logits.dims2();
    check_targets(batch, classes, targets)?;
    let data = logits.data();
    let mut sum = 0.0f64;
    for (i, &target) in targets.iter().enumerate() {
        let row = &data[i * classes..(i + 1) * classes];
        sum += row_nll(row, target);
    }
    Ok(sum / batch as f64)
}

/// Cross-entropy plus its gradient with respect to the logits. The gradient
/// of the batch mean is `(softmax(row) - onehot(target)) / batch` per row.
pub fn cross_entropy_with_grad(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = logits.dims2();
    check_targets(batch, classes, targets)?;
    let data = logits.data();
    let mut grad = Tensor::zeros(logits.shape());
    let gdata = grad.data_mut();
    let inv_batch = 1.0 / batch as f32;
    let mut sum = 0.0f64;
    for (i, &target) in targets.iter().enumerate() {
        let row = &data[i * classes..(i + 1) * classes];
        sum += row_nll(row, target);
        let grow = &mut gdata[i * classes..(i + 1) * classes];
        softmax_into(row, grow);
        grow[target] -= 1.0;
        for g in grow.iter_mut() {
            *g *= inv_batch;
        }
    }
    Ok((sum / batch as f64, grad))
}

/// `-log softmax(row)[target]` with max-subtraction, accumulated in f64.
fn row_nll(row: &[f32], target: usize) -> f64 {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut denom = 0.0f64;
    for &v in row {
        denom += (v as f64 - max).exp();
    }
    denom.ln() + max - row[target] as f64
}

/// Writes `softmax(row)` into `out` (same length), stabilized.
pub fn softmax_into(row: &[f32], out: &mut [f32]) {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut denom = 0.0f32;
    for (o, &v) in out.iter_mut().zip(row.iter()) {
        let e = (v - max).exp();
        *o = e;
        denom += e;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}

/// Per-task targets for one batch, in canonical task order.
pub type TaskTargets = [Vec<usize>; 4];

/// Summed multi-task objective over a logits bundle.
pub fn total_loss(bundle: &LogitsBundle, targets: &TaskTargets) -> Result<LossBreakdown> {
    let mut parts = [0.0f64; 4];
    for (t, _) in TASKS.iter().enumerate() {
        parts[t] = cross_entropy(bundle.task(t), &targets[t])?;
    }
    Ok(LossBreakdown::from_parts(parts))
}

/// Summed objective plus per-task logit gradients, for the training step.
pub fn total_loss_with_grad(
    bundle: &LogitsBundle,
    targets: &TaskTargets,
) -> Result<(LossBreakdown, [Tensor; 4])> {
    let batch = bundle.batch();
    for t in 0..4 {
        if targets[t].len() != batch {
            return Err(Error::ShapeMismatch {
                expected: format!("{} targets for task {}", batch, TASKS[t]),
                got: format!("{}", targets[t].len()),
            });
        }
    }
    let mut parts = [0.0f64; 4];
    let mut grads: Vec<Tensor> = Vec::with_capacity(4);
    for t in 0..4 {
        let (loss, grad) = cross_entropy_with_grad(bundle.task(t), &targets[t])?;
        parts[t] = loss;
        grads.push(grad);
    }
    let grads: [Tensor; 4] = grads.try_into().expect("four tasks");
    Ok((LossBreakdown::from_parts(parts), grads))
}
