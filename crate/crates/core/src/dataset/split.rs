//! Deterministic 8:1:1 train/validation/test splitting.

use std::collections::HashMap;
use std::path::Path;

use super::SampleRecord;
use crate::error::{Error, Result};
use crate::rng::Stream;

pub const SPLIT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Disjoint, exhaustive sample-id assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Records belonging to one split, in split order.
    pub fn subset<'a>(
        &self,
        records: &'a [SampleRecord],
        split: Split,
    ) -> Result<Vec<&'a SampleRecord>> {
        let by_id: HashMap<&str, &SampleRecord> =
            records.iter().map(|r| (r.sample_id.as_str(), r)).collect();
        let mut out = Vec::new();
        for id in self.ids(split) {
            match by_id.get(id.as_str()) {
                Some(r) => out.push(*r),
                None => {
                    return Err(Error::InvalidSpec(format!(
                        "split references unknown sample_id `{id}`"
                    )))
                }
            }
        }
        Ok(out)
    }
}

/// Uniform random permutation keyed by `seed`, then contiguous slicing:
/// `floor(0.8 N)` train, `floor(0.1 N)` validation, remainder test.
/// Deliberately not stratified.
pub fn split_dataset(records: &[SampleRecord], seed: u64) -> Result<SplitAssignment> {
    let n = records.len();
    if n < 3 {
        return Err(Error::TooFewSamples { n });
    }
    let mut ids: Vec<String> = records.iter().map(|r| r.sample_id.clone()).collect();
    let mut rng = Stream::derive(seed, "dataset-split");
    rng.shuffle(&mut ids);

    let n_train = (n as f64 * SPLIT_RATIOS.0).floor() as usize;
    let n_val = (n as f64 * SPLIT_RATIOS.1).floor() as usize;
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(SplitAssignment {
        train: ids,
        val,
        test,
        seed,
    })
}

/// Persists an assignment as `sample_id<TAB>split` lines under a header
/// recording the seed and ratios.
pub fn write_split_file(assignment: &SplitAssignment, path: &Path) -> Result<()> {
    let mut out = format!(
        "# seed={} ratios={},{},{}\n",
        assignment.seed, SPLIT_RATIOS.0, SPLIT_RATIOS.1, SPLIT_RATIOS.2
    );
    for (split, ids) in [
        (Split::Train, &assignment.train),
        (Split::Val, &assignment.val),
        (Split::Test, &assignment.test),
    ] {
        for id in ids {
            out.push_str(id);
            out.push('\t');
            out.push_str(split.name());
            out.push('\n');
        }
    }
    std::fs::write(path, out)
        .map_err(|e| Error::io(format!("writing split file {}", path.display()), e))
}

/// Reloads a persisted assignment; the inverse of [`write_split_file`].
pub fn read_split_file(path: &Path) -> Result<SplitAssignment> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading split file {}", path.display()), e))?;
    let mut seed = None;
    let mut assignment = SplitAssignment {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed: 0,
    };
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        if line.starts_with('#') {
            for token in line.trim_start_matches('#').split_whitespace() {
                if let Some(v) = token.strip_prefix("seed=") {
                    seed = v.parse::<u64>().ok();
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (id, split) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(split), None) => (id, split),
            _ => {
                return Err(Error::ParseError {
                    line: row,
                    text: line.to_string(),
                })
            }
        };
        match Split::parse(split) {
            Some(Split::Train) => assignment.train.push(id.to_string()),
            Some(Split::Val) => assignment.val.push(id.to_string()),
            Some(Split::Test) => assignment.test.push(id.to_string()),
            None => {
                return Err(Error::ParseError {
                    line: row,
                    text: line.to_string(),
                })
            }
        }
    }
    assignment.seed = seed.ok_or(Error::ParseError {
        line: 1,
        text: "missing `# seed=` header".to_string(),
    })?;
    Ok(assignment)
}
