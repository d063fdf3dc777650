//! Canonical four-task label space for the porcelain dataset.
//!
//! Every model head, manifest row and metrics report is indexed against this
//! taxonomy: four tasks (dynasty, ware, glaze, type) with fixed category
//! orderings. Category indices are stable and citable; reference counts carry
//! the source collection's distribution and are informational only.

use std::fmt;

use crate::error::{Error, Result};
use crate::hash::ContentHash;

/// The four classification tasks, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Dynasty,
    Ware,
    Glaze,
    Type,
}

/// Canonical task order used everywhere (loss breakdowns, logits, reports).
pub const TASKS: [Task; 4] = [Task::Dynasty, Task::Ware, Task::Glaze, Task::Type];

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Dynasty => "dynasty",
            Task::Ware => "ware",
            Task::Glaze => "glaze",
            Task::Type => "type",
        }
    }

    pub fn parse(name: &str) -> Result<Task> {
        match name.trim().to_ascii_lowercase().as_str() {
            "dynasty" => Ok(Task::Dynasty),
            "ware" => Ok(Task::Ware),
            "glaze" => Ok(Task::Glaze),
            "type" => Ok(Task::Type),
            other => Err(Error::UnknownTask(other.to_string())),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Task::Dynasty => 0,
            Task::Ware => 1,
            Task::Glaze => 2,
            Task::Type => 3,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One task's ordered category vocabulary plus reference counts.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub name: Task,
    pub categories: Vec<String>,
    pub reference_counts: Vec<u32>,
}

impl TaskSpec {
    fn new(name: Task, entries: &[(&str, u32)]) -> Self {
        TaskSpec {
            name,
            categories: entries.iter().map(|(n, _)| n.to_string()).collect(),
            reference_counts: entries.iter().map(|(_, c)| *c).collect(),
        }
    }

    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }
}

/// The full four-task taxonomy.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskTaxonomy {
    tasks: Vec<TaskSpec>,
}

/// Total number of samples in the reference collection.
pub const REFERENCE_TOTAL: u32 = 5993;

/// Builds the canonical taxonomy with reference distribution counts attached.
pub fn build_taxonomy() -> TaskTaxonomy {
    TaskTaxonomy {
        tasks: vec![
            TaskSpec::new(Task::Dynasty, &[("Song", 5288), ("Yuan", 705)]),
            TaskSpec::new(
                Task::Ware,
                &[
                    ("Ding", 2296),
                    ("Jizhou", 167),
                    ("Ge", 416),
                    ("Guan", 1401),
                    ("Jun", 263),
                    ("Longquan", 385),
                    ("Ru", 677),
                    ("Xianghu", 76),
                    ("Linchuan", 98),
                    ("Peng", 214),
                ],
            ),
            TaskSpec::new(
                Task::Glaze,
                &[
                    ("White", 2668),
                    ("Black", 113),
                    ("Celadon", 2379),
                    ("Green", 577),
                    ("Moonwhite", 54),
                    ("Yellowishgreen", 4),
                    ("Bluishwhite", 64),
                    ("Blue", 134),
                ],
            ),
            TaskSpec::new(
                Task::Type,
                &[
                    ("Washer", 747),
                    ("Dish", 1610),
                    ("Bowl", 2002),
                    ("Plate", 127),
                    ("Teabowlstand", 64),
                    ("Pillow", 112),
                    ("Basin", 244),
                    ("Vase", 565),
                    ("Jar", 74),
                    ("Incenseburner", 157),
                    ("Vessel", 147),
                    ("Cup", 144),
                ],
            ),
        ],
    }
}

impl TaskTaxonomy {
    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn task(&self, task: Task) -> &TaskSpec {
        &self.tasks[task.index()]
    }

    /// Category cardinality per task, in canonical task order.
    pub fn cardinalities(&self) -> [usize; 4] {
        [
            self.tasks[0].cardinality(),
            self.tasks[1].cardinality(),
            self.tasks[2].cardinality(),
            self.tasks[3].cardinality(),
        ]
    }

    /// 0-based category index for a name; matching is case-insensitive after
    /// trimming whitespace. The canonical spelling wins ties by construction
    /// (names are unique per task).
    pub fn encode_label(&self, task: Task, category: &str) -> Result<usize> {
        let spec = self.task(task);
        let wanted = category.trim().to_ascii_lowercase();
        spec.categories
            .iter()
            .position(|c| c.to_ascii_lowercase() == wanted)
            .ok_or_else(|| Error::UnknownCategory {
                task: task.name().to_string(),
                name: category.trim().to_string(),
                valid: spec.categories.join(", "),
            })
    }

    /// Canonical category name for an index.
    pub fn decode_label(&self, task: Task, index: usize) -> Result<&str> {
        let spec = self.task(task);
        spec.categories
            .get(index)
            .map(|s| s.as_str())
            .ok_or(Error::IndexOutOfRange {
                task: task.name().to_string(),
                index,
                len: spec.cardinality(),
            })
    }

    /// Per-task label histograms over a set of already-encoded label rows.
    ///
    /// `labels` yields one `[usize; 4]` per sample, in canonical task order.
    pub fn histogram<'a, I>(&self, labels: I) -> [Vec<u64>; 4]
    where
        I: IntoIterator<Item = &'a [usize; 4]>,
    {
        let mut out = [
            vec![0u64; self.tasks[0].cardinality()],
            vec![0u64; self.tasks[1].cardinality()],
            vec![0u64; self.tasks[2].cardinality()],
            vec![0u64; self.tasks[3].cardinality()],
        ];
        for row in labels {
            for (t, &idx) in row.iter().enumerate() {
                out[t][idx] += 1;
            }
        }
        out
    }

    /// Stable fingerprint over task names and category orderings. Checkpoints
    /// record this and evaluation refuses a mismatch.
    pub fn fingerprint(&self) -> String {
        let mut h = ContentHash::new();
        for spec in &self.tasks {
            h.update_str(spec.name.name());
            for c in &spec.categories {
                h.update_str(c);
            }
        }
        h.hex()
    }

    /// Structured text export: one block per task, one `index<TAB>name` line
    /// per category.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        for spec in &self.tasks {
            out.push_str(spec.name.name());
            out.push('\n');
            for (i, c) in spec.categories.iter().enumerate() {
                out.push_str(&format!("{}\t{}\n", i, c));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_shape() {
        let tax = build_taxonomy();
        assert_eq!(tax.cardinalities(), [2, 10, 8, 12]);
        let dynasty = tax.task(Task::Dynasty);
        assert_eq!(dynasty.categories, vec!["Song", "Yuan"]);
        assert_eq!(dynasty.reference_counts, vec![5288, 705]);
    }

    #[test]
    fn reference_counts_sum_to_total_per_task() {
        let tax = build_taxonomy();
        for spec in tax.tasks() {
            let sum: u32 = spec.reference_counts.iter().sum();
            assert_eq!(sum, REFERENCE_TOTAL, "task {}", spec.name);
            assert_eq!(spec.categories.len(), spec.reference_counts.len());
        }
    }

    #[test]
    fn category_names_unique_and_nonempty() {
        let tax = build_taxonomy();
        for spec in tax.tasks() {
            let mut seen = std::collections::HashSet::new();
            for c in &spec.categories {
                assert!(!c.trim().is_empty());
                assert!(seen.insert(c.to_ascii_lowercase()), "duplicate {}", c);
            }
        }
    }

    #[test]
    fn encode_examples() {
        let tax = build_taxonomy();
        assert_eq!(tax.encode_label(Task::Ware, "Ding").unwrap(), 0);
        // case-insensitive with whitespace trimming
        assert_eq!(tax.encode_label(Task::Glaze, "blue").unwrap(), 7);
        assert_eq!(tax.encode_label(Task::Glaze, "  BLUE ").unwrap(), 7);
        let err = tax.encode_label(Task::Type, "Teapot").unwrap_err();
        match err {
            Error::UnknownCategory { ref valid, .. } => {
                assert!(valid.contains("Washer") && valid.contains("Cup"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn decode_examples() {
        let tax = build_taxonomy();
        assert_eq!(tax.decode_label(Task::Dynasty, 0).unwrap(), "Song");
        assert_eq!(tax.decode_label(Task::Type, 11).unwrap(), "Cup");
        assert!(matches!(
            tax.decode_label(Task::Glaze, 8),
            Err(Error::IndexOutOfRange { len: 8, .. })
        ));
    }

    #[test]
    fn histogram_examples() {
        let tax = build_taxonomy();
        let empty: Vec<[usize; 4]> = vec![];
        let hist = tax.histogram(empty.iter());
        for (t, counts) in hist.iter().enumerate() {
            assert_eq!(counts.len(), tax.cardinalities()[t]);
            assert!(counts.iter().all(|&c| c == 0));
        }

        // three records all labeled (Song, Ding, White, Bowl)
        let row = [0usize, 0, 0, 2];
        let rows = [row, row, row];
        let hist = tax.histogram(rows.iter());
        assert_eq!(hist[0], vec![3, 0]);
        assert_eq!(hist[3][2], 3);
    }

    #[test]
    fn build_is_deterministic() {
        assert_eq!(build_taxonomy(), build_taxonomy());
        assert_eq!(build_taxonomy().fingerprint(), build_taxonomy().fingerprint());
    }

    #[test]
    fn export_text_format() {
        let text = build_taxonomy().export_text();
        assert!(text.starts_with("dynasty\n0\tSong\n1\tYuan\n"));
        assert!(text.contains("type\n0\tWasher\n"));
        assert!(text.contains("11\tCup\n"));
    }

    #[test]
    fn task_parse_round_trip() {
        for t in TASKS {
            assert_eq!(Task::parse(t.name()).unwrap(), t);
        }
        assert!(matches!(Task::parse("shape"), Err(Error::UnknownTask(_))));
    }

    proptest! {
        #[test]
        fn encode_decode_identity(task_idx in 0usize..4, idx in 0usize..12) {
            let tax = build_taxonomy();
            let task = TASKS[task_idx];
            if idx < tax.task(task).cardinality() {
                let name = tax.decode_label(task, idx).unwrap().to_string();
                prop_assert_eq!(tax.encode_label(task, &name).unwrap(), idx);
                // decode . encode normalizes any casing back to canonical
                let noisy = format!("  {} ", name.to_ascii_uppercase());
                let enc = tax.encode_label(task, &noisy).unwrap();
                prop_assert_eq!(tax.decode_label(task, enc).unwrap(), name);
            }
        }

        #[test]
        fn histogram_totals_match_record_count(rows in proptest::collection::vec(
            (0usize..2, 0usize..10, 0usize..8, 0usize..12), 0..50)) {
            let tax = build_taxonomy();
            let encoded: Vec<[usize; 4]> = rows.iter().map(|&(a, b, c, d)| [a, b, c, d]).collect();
            let hist = tax.histogram(encoded.iter());
            for counts in hist.iter() {
                prop_assert_eq!(counts.iter().sum::<u64>(), rows.len() as u64);
            }
        }
    }
}
