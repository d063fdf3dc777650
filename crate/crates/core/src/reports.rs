//! Report documents: metric tables, confusion-matrix exports and loss-curve
//! files. Percentages render to one decimal, ratios to three; the
//! machine-readable exports round-trip exactly through Rust's shortest
//! float formatting.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::objective::LossBreakdown;
use crate::taxonomy::{Task, TaskTaxonomy};

/// One evaluated (model, task, transfer-flag) result.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub task: Task,
    pub transfer: bool,
    /// Validation accuracy at the selected checkpoint, when known.
    pub val_accuracy: Option<f64>,
    pub test_accuracy: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn ratio(v: f64) -> String {
    format!("{:.3}", v)
}

/// Renders the model-by-task metrics table (validation accuracy, test
/// accuracy, balanced accuracy, precision, recall, F1) and the transfer
/// comparison table that adds the transfer-learning yes/no column.
pub fn render_tables(rows: &[ReportRow]) -> Result<(String, String)> {
    if rows.is_empty() {
        return Err(Error::EmptyReportSet);
    }

    let mut by_task = String::new();
    by_task.push_str(
        "Model | Task | Validation accuracy (%) | Test accuracy (%) | Balanced accuracy (%) | Precision | Recall | F1 score\n",
    );
    for r in rows {
        by_task.push_str(&format!(
            "{} | {} | {} | {} | {} | {} | {} | {}\n",
            r.model,
            title_case(r.task),
            r.val_accuracy.map_or_else(|| "-".to_string(), pct),
            pct(r.test_accuracy),
            pct(r.balanced_accuracy),
            ratio(r.precision),
            ratio(r.recall),
            ratio(r.f1),
        ));
    }

    let mut transfer = String::new();
    transfer.push_str(
        "Model | Task | Transfer learning | Test accuracy (%) | Balanced accuracy (%) | Precision | Recall | F1 score\n",
    );
    for r in rows {
        transfer.push_str(&format!(
            "{} | {} | {} | {} | {} | {} | {} | {}\n",
            r.model,
            title_case(r.task),
            if r.transfer { "Yes" } else { "No" },
            pct(r.test_accuracy),
            pct(r.balanced_accuracy),
            ratio(r.precision),
            ratio(r.recall),
            ratio(r.f1),
        ));
    }
    Ok((by_task, transfer))
}

fn title_case(task: Task) -> String {
    let name = task.name();
    let mut chars = name.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

const REPORT_HEADER: &str =
    "model\ttask\ttransfer\tval_accuracy\ttest_accuracy\tbalanced_accuracy\tprecision\trecall\tf1";

/// Serializes rows as the accumulating tab-separated report document.
pub fn write_report_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.model,
            r.task.name(),
            if r.transfer { "yes" } else { "no" },
            r.val_accuracy.map_or_else(|| "-".to_string(), |v| v.to_string()),
            r.test_accuracy,
            r.balanced_accuracy,
            r.precision,
            r.recall,
            r.f1,
        ));
    }
    std::fs::write(path, out)
        .map_err(|e| Error::io(format!("writing report {}", path.display()), e))
}

/// Reloads a report document written by [`write_report_rows`].
pub fn read_report_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading report {}", path.display()), e))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != REPORT_HEADER {
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
        if parts.len() != 9 {
            return Err(Error::ParseError {
                line: idx + 1,
                text: line.to_string(),
            });
        }
        let bad = |text: &str| Error::ParseError {
            line: idx + 1,
            text: text.to_string(),
        };
        rows.push(ReportRow {
            model: parts[0].to_string(),
            task: Task::parse(parts[1])?,
            transfer: match parts[2] {
                "yes" => true,
                "no" => false,
                other => return Err(bad(other)),
            },
            val_accuracy: if parts[3] == "-" {
                None
            } else {
                Some(parts[3].parse().map_err(|_| bad(parts[3]))?)
            },
            test_accuracy: parts[4].parse().map_err(|_| bad(parts[4]))?,
            balanced_accuracy: parts[5].parse().map_err(|_| bad(parts[5]))?,
            precision: parts[6].parse().map_err(|_| bad(parts[6]))?,
            recall: parts[7].parse().map_err(|_| bad(parts[7]))?,
            f1: parts[8].parse().map_err(|_| bad(parts[8]))?,
        });
    }
    Ok(rows)
}

/// Exports a confusion matrix as tab-separated text with category names on
/// the header row and column.
pub fn write_confusion_matrix(
    path: &Path,
    matrix: &ConfusionMatrix,
    task: Task,
    taxonomy: &TaskTaxonomy,
) -> Result<()> {
    let names = &taxonomy.task(task).categories;
    let mut out = String::from("true\\pred");
    for n in names {
        out.push('\t');
        out.push_str(n);
    }
    out.push('\n');
    for t in 0..matrix.k() {
        out.push_str(&names[t]);
        for p in 0..matrix.k() {
            out.push_str(&format!("\t{}", matrix.get(t, p)));
        }
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| Error::io(format!("writing matrix {}", path.display()), e))
}

/// Reloads a matrix export; the inverse of [`write_confusion_matrix`].
pub fn read_confusion_matrix(path: &Path) -> Result<ConfusionMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading matrix {}", path.display()), e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::ParseError {
        line: 1,
        text: "empty matrix file".into(),
    })?;
    let k = header.split('\t').count() - 1;
    let mut matrix = ConfusionMatrix::zeros(k);
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != k + 1 || idx >= k {
            return Err(Error::ParseError {
                line: idx + 2,
                text: line.to_string(),
            });
        }
        for (p, cell) in parts[1..].iter().enumerate() {
            let count: u64 = cell.parse().map_err(|_| Error::ParseError {
                line: idx + 2,
                text: cell.to_string(),
            })?;
            for _ in 0..count {
                matrix.record(idx, p);
            }
        }
    }
    Ok(matrix)
}

/// One epoch record in a curve series.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub run: String,
    pub epoch: usize,
    pub train_total: f64,
    pub val_total: f64,
    pub train_per_task: [f64; 4],
}

const CURVE_HEADER: &str =
    "run,epoch,train_total,val_total,loss_dynasty,loss_ware,loss_glaze,loss_type";

/// Writes one or more labeled loss-curve series as directly plottable
/// comma-separated text.
pub fn write_curves(path: &Path, series: &[(String, Vec<(usize, LossBreakdown, f64)>)]) -> Result<()> {
    if series.is_empty() || series.iter().all(|(_, s)| s.is_empty()) {
        return Err(Error::EmptyReportSet);
    }
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for (run, points) in series {
        for (epoch, train, val_total) in points {
            let t = train.per_task();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                run, epoch, train.total, val_total, t[0], t[1], t[2], t[3]
            ));
        }
    }
    std::fs::write(path, out)
        .map_err(|e| Error::io(format!("writing curves {}", path.display()), e))
}

/// Reloads a curve file written by [`write_curves`].
pub fn read_curves(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading curves {}", path.display()), e))?;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != CURVE_HEADER {
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
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::ParseError {
                line: idx + 1,
                text: line.to_string(),
            });
        }
        let bad = |t: &str| Error::ParseError {
            line: idx + 1,
            text: t.to_string(),
        };
        let f = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(s)) };
        points.push(CurvePoint {
            run: parts[0].to_string(),
            epoch: parts[1].parse().map_err(|_| bad(parts[1]))?,
            train_total: f(parts[2])?,
            val_total: f(parts[3])?,
            train_per_task: [f(parts[4])?, f(parts[5])?, f(parts[6])?, f(parts[7])?],
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{confusion_matrix, metrics_from_matrix};
    use crate::taxonomy::build_taxonomy;

    fn sample_row() -> ReportRow {
        ReportRow {
            model: "InceptionV3".into(),
            task: Task::Dynasty,
            transfer: true,
            val_accuracy: Some(0.979),
            test_accuracy: 0.976,
            balanced_accuracy: 0.953,
            precision: 0.976,
            recall: 0.976,
            f1: 0.976,
        }
    }

    #[test]
    fn reference_row_formatting() {
        let (by_task, transfer) = render_tables(&[sample_row()]).unwrap();
        // 0.976 renders as 97.6 (percent, one decimal) and 0.976 (ratio)
        assert!(by_task.contains("InceptionV3 | Dynasty | 97.9 | 97.6 | 95.3 | 0.976 | 0.976 | 0.976"));
        assert!(transfer.contains("InceptionV3 | Dynasty | Yes | 97.6 | 95.3 | 0.976 | 0.976 | 0.976"));
    }

    #[test]
    fn paired_transfer_rows_render_both_flags() {
        let mut scratch = sample_row();
        scratch.model = "MobileNetV2".into();
        scratch.task = Task::Type;
        scratch.transfer = false;
        scratch.test_accuracy = 0.733;
        let mut pretrained = scratch.clone();
        pretrained.transfer = true;
        pretrained.test_accuracy = 0.861;
        let (_, transfer) = render_tables(&[pretrained, scratch]).unwrap();
        assert!(transfer.contains("MobileNetV2 | Type | Yes | 86.1"));
        assert!(transfer.contains("MobileNetV2 | Type | No | 73.3"));
    }

    #[test]
    fn single_report_single_row() {
        let (by_task, _) = render_tables(&[sample_row()]).unwrap();
        assert_eq!(by_task.lines().count(), 2);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(matches!(render_tables(&[]), Err(Error::EmptyReportSet)));
    }

    #[test]
    fn report_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.tsv");
        let mut other = sample_row();
        other.transfer = false;
        other.val_accuracy = None;
        other.test_accuracy = 0.123456789012345;
        let rows = vec![sample_row(), other];
        write_report_rows(&path, &rows).unwrap();
        let loaded = read_report_rows(&path).unwrap();
        assert_eq!(rows, loaded);
    }

    #[test]
    fn matrix_round_trip() {
        let tax = build_taxonomy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("matrix.tsv");
        let m = confusion_matrix(&[0, 1, 1, 0, 1], &[0, 0, 1, 1, 1], 2).unwrap();
        write_confusion_matrix(&path, &m, Task::Dynasty, &tax).unwrap();
        let loaded = read_confusion_matrix(&path).unwrap();
        assert_eq!(m, loaded);
        // derived metrics agree after the round trip
        let a = metrics_from_matrix(&m, Task::Dynasty).unwrap();
        let b = metrics_from_matrix(&loaded, Task::Dynasty).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn curves_round_trip_with_two_runs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let mk = |total: f64| LossBreakdown::from_parts([total / 4.0; 4]);
        let series = vec![
            (
                "pretrained".to_string(),
                vec![(1usize, mk(4.0), 3.9), (2, mk(2.0), 2.1)],
            ),
            ("scratch".to_string(), vec![(1, mk(7.5), 7.2), (2, mk(6.0), 5.9)]),
        ];
        write_curves(&path, &series).unwrap();
        let points = read_curves(&path).unwrap();
        assert_eq!(points.len(), 4);
        assert_eq!(points[0].run, "pretrained");
        assert_eq!(points[2].run, "scratch");
        assert_eq!(points[2].train_total, 7.5);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "run,epoch,train_total,val_total,loss_dynasty,loss_ware,loss_glaze,loss_type\n"
        ));
    }
}
