//! Confusion matrices and per-task evaluation metrics.
//!
//! Aggregate precision/recall/F1 are support-weighted means over categories
//! that actually occur in the evaluated subset; balanced accuracy is the
//! unweighted mean of per-category recall over those same categories. With
//! support weighting, aggregate recall equals plain accuracy identically.

use crate::dataset::{load_batch, BatchMode, PreprocessSpec, SampleRecord};
use crate::error::{Error, Result};
use crate::models::MultiTaskModel;
use crate::taxonomy::{Task, TASKS};

/// Row-major `K x K` counts; rows are true categories, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, true_cat: usize, pred_cat: usize) -> u64 {
        self.counts[true_cat * self.k + pred_cat]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Number of samples whose true label is `cat`.
    pub fn support(&self, cat: usize) -> u64 {
        (0..self.k).map(|p| self.get(cat, p)).sum()
    }

    /// Number of samples predicted as `cat`.
    pub fn predicted(&self, cat: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, cat)).sum()
    }

    pub fn record(&mut self, true_cat: usize, pred_cat: usize) {
        self.counts[true_cat * self.k + pred_cat] += 1;
    }

    /// Matrix addition; the reduction operator for per-batch partials.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.k, other.k);
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
    }
}

/// Tallies predictions against targets.
pub fn confusion_matrix(
    predictions: &[usize],
    targets: &[usize],
    k: usize,
) -> Result<ConfusionMatrix> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: format!("equal nonempty prediction/target lengths (k={k})"),
            got: format!("{} vs {}", predictions.len(), targets.len()),
        });
    }
    let mut m = ConfusionMatrix::zeros(k);
    for (i, (&p, &t)) in predictions.iter().zip(targets.iter()).enumerate() {
        if p >= k || t >= k {
            return Err(Error::TargetOutOfRange {
                index: p.max(t),
                classes: k,
                sample: i,
            });
        }
        m.record(t, p);
    }
    Ok(m)
}

/// One category's one-vs-rest breakdown.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CategoryMetrics {
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-task evaluation summary.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub task: Task,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_category: Vec<CategoryMetrics>,
    pub matrix: ConfusionMatrix,
}

/// Derives all metrics from a confusion matrix.
///
/// Zero-denominator precision and recall are defined as 0; categories with
/// zero support are excluded from balanced accuracy and carry zero weight in
/// the weighted aggregates.
pub fn metrics_from_matrix(matrix: &ConfusionMatrix, task: Task) -> Result<MetricsReport> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let k = matrix.k();
    let mut per_category = Vec::with_capacity(k);
    let mut weighted_p = 0.0f64;
    let mut weighted_r = 0.0f64;
    let mut weighted_f1 = 0.0f64;
    let mut recall_sum = 0.0f64;
    let mut present = 0u64;
    for c in 0..k {
        let tp = matrix.get(c, c);
        let support = matrix.support(c);
        let predicted = matrix.predicted(c);
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp as f64 / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_category.push(CategoryMetrics {
            support,
            precision,
            recall,
            f1,
        });
        if support > 0 {
            let w = support as f64 / total as f64;
            weighted_p += w * precision;
            weighted_r += w * recall;
            weighted_f1 += w * f1;
            recall_sum += recall;
            present += 1;
        }
    }
    Ok(MetricsReport {
        task,
        accuracy: matrix.trace() as f64 / total as f64,
        balanced_accuracy: recall_sum / present as f64,
        precision: weighted_p,
        recall: weighted_r,
        f1: weighted_f1,
        per_category,
        matrix: matrix.clone(),
    })
}

/// Index of the row maximum; ties break toward the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Evaluates a model over a record subset: per-task argmax predictions over
/// the whole subset, one report per task. Runs in inference mode with no
/// augmentation.
pub fn evaluate_model(
    model: &mut MultiTaskModel,
    records: &[&SampleRecord],
    preprocess: &PreprocessSpec,
) -> Result<Vec<MetricsReport>> {
    let (predictions, targets) = predict_subset(model, records, preprocess)?;
    let widths = crate::build_taxonomy().cardinalities();
    let mut reports = Vec::with_capacity(4);
    for (t, task) in TASKS.iter().enumerate() {
        let matrix = confusion_matrix(&predictions[t], &targets[t], widths[t])?;
        reports.push(metrics_from_matrix(&matrix, *task)?);
    }
    Ok(reports)
}

/// Per-task predictions and targets for a subset, batched at 32.
pub fn predict_subset(
    model: &mut MultiTaskModel,
    records: &[&SampleRecord],
    preprocess: &PreprocessSpec,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut spec = preprocess.clone();
    spec.augmentation = None;
    let mut predictions: Vec<Vec<usize>> = vec![Vec::new(); 4];
    let mut targets: Vec<Vec<usize>> = vec![Vec::new(); 4];
    for chunk in records.chunks(32) {
        let batch = load_batch(chunk, &spec, BatchMode::Eval)?;
        let bundle = model.forward(&batch, false)?;
        for t in 0..4 {
            let logits = bundle.task(t);
            let (_, width) = logits.dims2();
            for (i, record) in chunk.iter().enumerate() {
                let row = &logits.data()[i * width..(i + 1) * width];
                predictions[t].push(argmax(row));
                targets[t].push(record.labels[t]);
            }
        }
    }
    Ok((predictions, targets))
}

/// Per-task accuracy of predictions against targets.
pub fn per_task_accuracy(predictions: &[Vec<usize>], targets: &[Vec<usize>]) -> [f64; 4] {
    let mut out = [0.0f64; 4];
    for t in 0..4 {
        let correct = predictions[t]
            .iter()
            .zip(targets[t].iter())
            .filter(|(p, y)| p == y)
            .count();
        out[t] = correct as f64 / targets[t].len().max(1) as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn identity_predictions_fill_diagonal() {
        let m = confusion_matrix(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(m.trace(), 3);
        assert_eq!(m.total(), 3);
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(m.get(t, p), u64::from(t == p));
            }
        }
    }

    #[test]
    fn off_diagonal_counts_land_where_expected() {
        // preds (1,1), targets (0,1) -> [[0,1],[0,1]]
        let m = confusion_matrix(&[1, 1], &[0, 1], 2).unwrap();
        assert_eq!(m.get(0, 0), 0);
        assert_eq!(m.get(0, 1), 1);
        assert_eq!(m.get(1, 0), 0);
        assert_eq!(m.get(1, 1), 1);
    }

    #[test]
    fn total_is_conserved_under_random_pairs() {
        let mut rng = Stream::derive(1, "metrics-conservation");
        let preds: Vec<usize> = (0..200).map(|_| rng.below(7)).collect();
        let targets: Vec<usize> = (0..200).map(|_| rng.below(7)).collect();
        let m = confusion_matrix(&preds, &targets, 7).unwrap();
        assert_eq!(m.total(), 200);
    }

    #[test]
    fn worked_binary_example() {
        // [[3,1],[1,5]]: class recalls 3/4 and 5/6, class precisions 3/4 and
        // 5/6, supports 4 and 6
        let mut m = ConfusionMatrix::zeros(2);
        for _ in 0..3 {
            m.record(0, 0);
        }
        m.record(0, 1);
        m.record(1, 0);
        for _ in 0..5 {
            m.record(1, 1);
        }
        let r = metrics_from_matrix(&m, Task::Dynasty).unwrap();
        assert!((r.accuracy - 0.8).abs() < 1e-12);
        assert!((r.balanced_accuracy - 0.791667).abs() < 1e-6);
        assert!((r.precision - 0.8).abs() < 1e-12);
        assert!((r.recall - 0.8).abs() < 1e-12);
        assert!((r.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn perfect_diagonal_scores_one() {
        let m = confusion_matrix(&[0, 1, 2, 3], &[0, 1, 2, 3], 4).unwrap();
        let r = metrics_from_matrix(&m, Task::Ware).unwrap();
        for v in [r.accuracy, r.balanced_accuracy, r.precision, r.recall, r.f1] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn balanced_accuracy_is_mean_of_recalls() {
        // recalls 1.0 and 0.5 -> balanced accuracy 0.75
        let mut m = ConfusionMatrix::zeros(2);
        m.record(0, 0);
        m.record(0, 0);
        m.record(1, 1);
        m.record(1, 0);
        let r = metrics_from_matrix(&m, Task::Glaze).unwrap();
        assert!((r.balanced_accuracy - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_support_categories_are_excluded() {
        // three categories, nothing ever labeled 2
        let m = confusion_matrix(&[0, 1, 2], &[0, 1, 0], 3).unwrap();
        let r = metrics_from_matrix(&m, Task::Glaze).unwrap();
        // recalls: cat0 = 1/2, cat1 = 1/1; cat2 excluded
        assert!((r.balanced_accuracy - 0.75).abs() < 1e-12);
        assert_eq!(r.per_category[2].support, 0);
        // predicted-into-but-absent category keeps zero precision
        assert_eq!(r.per_category[2].precision, 0.0);
    }

    #[test]
    fn empty_matrix_rejected() {
        let m = ConfusionMatrix::zeros(3);
        assert!(matches!(
            metrics_from_matrix(&m, Task::Type),
            Err(Error::EmptyMatrix)
        ));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[-1.0, -0.5]), 1);
    }

    /// Naive per-sample counting oracle that never builds a matrix.
    fn oracle(preds: &[usize], targets: &[usize], k: usize) -> (f64, f64, f64, f64, f64) {
        let n = preds.len() as f64;
        let accuracy = preds.iter().zip(targets).filter(|(p, t)| p == t).count() as f64 / n;
        let mut weighted_p = 0.0;
        let mut weighted_r = 0.0;
        let mut weighted_f = 0.0;
        let mut recall_sum = 0.0;
        let mut present = 0.0;
        for c in 0..k {
            let support = targets.iter().filter(|&&t| t == c).count() as f64;
            if support == 0.0 {
                continue;
            }
            let tp = preds
                .iter()
                .zip(targets)
                .filter(|(&p, &t)| p == c && t == c)
                .count() as f64;
            let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = tp / support;
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            weighted_p += support / n * precision;
            weighted_r += support / n * recall;
            weighted_f += support / n * f1;
            recall_sum += recall;
            present += 1.0;
        }
        (accuracy, recall_sum / present, weighted_p, weighted_r, weighted_f)
    }

    #[test]
    fn matrix_metrics_match_counting_oracle() {
        let mut rng = Stream::derive(77, "metrics-oracle");
        for case in 0..200 {
            let k = 2 + rng.below(11);
            let n = 1 + rng.below(500);
            let preds: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let targets: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let m = confusion_matrix(&preds, &targets, k).unwrap();
            let r = metrics_from_matrix(&m, Task::Dynasty).unwrap();
            let (acc, bal, p, rec, f1) = oracle(&preds, &targets, k);
            assert_eq!(r.accuracy, acc, "case {case}");
            assert!((r.balanced_accuracy - bal).abs() < 1e-12, "case {case}");
            assert!((r.precision - p).abs() < 1e-12, "case {case}");
            assert!((r.recall - rec).abs() < 1e-12, "case {case}");
            assert!((r.f1 - f1).abs() < 1e-12, "case {case}");
            // weighted recall is accuracy, exactly
            assert!((r.recall - r.accuracy).abs() < 1e-12, "case {case}");
        }
    }

    #[test]
    fn duplication_of_one_category_preserves_balanced_accuracy() {
        let mut rng = Stream::derive(13, "metrics-dup");
        let k = 4;
        let preds: Vec<usize> = (0..100).map(|_| rng.below(k)).collect();
        let targets: Vec<usize> = (0..100).map(|_| rng.below(k)).collect();
        let base = metrics_from_matrix(&confusion_matrix(&preds, &targets, k).unwrap(), Task::Ware)
            .unwrap();
        // duplicate every sample of category 2
        let mut preds2 = preds.clone();
        let mut targets2 = targets.clone();
        for i in 0..100 {
            if targets[i] == 2 {
                preds2.push(preds[i]);
                targets2.push(targets[i]);
            }
        }
        let dup = metrics_from_matrix(&confusion_matrix(&preds2, &targets2, k).unwrap(), Task::Ware)
            .unwrap();
        assert!((base.balanced_accuracy - dup.balanced_accuracy).abs() < 1e-12);
    }

    #[test]
    fn consistent_relabeling_preserves_aggregates() {
        let mut rng = Stream::derive(21, "metrics-perm");
        let k = 5;
        let preds: Vec<usize> = (0..200).map(|_| rng.below(k)).collect();
        let targets: Vec<usize> = (0..200).map(|_| rng.below(k)).collect();
        let perm = [3usize, 0, 4, 1, 2];
        let preds_p: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
        let targets_p: Vec<usize> = targets.iter().map(|&t| perm[t]).collect();
        let a = metrics_from_matrix(&confusion_matrix(&preds, &targets, k).unwrap(), Task::Type)
            .unwrap();
        let b =
            metrics_from_matrix(&confusion_matrix(&preds_p, &targets_p, k).unwrap(), Task::Type)
                .unwrap();
        // permuted matrix rows/columns
        for t in 0..k {
            for p in 0..k {
                assert_eq!(a.matrix.get(t, p), b.matrix.get(perm[t], perm[p]));
            }
        }
        assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        assert!((a.balanced_accuracy - b.balanced_accuracy).abs() < 1e-12);
        assert!((a.precision - b.precision).abs() < 1e-12);
        assert!((a.f1 - b.f1).abs() < 1e-12);
    }

    #[test]
    fn merge_is_partial_sum_reduction() {
        let a = confusion_matrix(&[0, 1], &[0, 0], 2).unwrap();
        let b = confusion_matrix(&[1, 1], &[1, 0], 2).unwrap();
        let whole = confusion_matrix(&[0, 1, 1, 1], &[0, 0, 1, 0], 2).unwrap();
        let mut merged = a.clone();
        merged.merge(&b);
        assert_eq!(merged, whole);
    }
}
