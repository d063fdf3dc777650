//! Manifest loading and writing.
//!
//! A manifest is UTF-8 delimiter-separated text with the header
//! `sample_id,image_path,dynasty,ware,glaze,type`. Columns may appear in any
//! order; fields must not contain the delimiter. Image files are not opened
//! at load time.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::SampleRecord;
use crate::error::{Error, Result};
use crate::taxonomy::{TaskTaxonomy, TASKS};

pub const MANIFEST_COLUMNS: [&str; 6] =
    ["sample_id", "image_path", "dynasty", "ware", "glaze", "type"];

/// Loads and validates a manifest. Relative image paths are resolved against
/// the manifest's directory. Row numbers in errors are file line numbers
/// (the header is line 1).
pub fn load_manifest(path: &Path, taxonomy: &TaskTaxonomy) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base, taxonomy)
}

fn parse_manifest(text: &str, base: &Path, taxonomy: &TaskTaxonomy) -> Result<Vec<SampleRecord>> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) if line.trim().is_empty() => continue,
            Some((_, line)) => break line,
            None => return Err(Error::EmptyManifest),
        }
    };
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let mut cols = [usize::MAX; 6];
    for (i, wanted) in MANIFEST_COLUMNS.iter().enumerate() {
        cols[i] = names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(wanted))
            .ok_or_else(|| Error::MissingColumn(wanted.to_string()))?;
    }
    let width = names.len();

    let mut records = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (idx, line) in lines {
        let row = idx + 1; // 1-based file line number
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(Error::MalformedRow {
                row,
                expected: width,
                found: fields.len(),
            });
        }
        let sample_id = fields[cols[0]].to_string();
        if sample_id.is_empty() {
            return Err(Error::MalformedRow {
                row,
                expected: width,
                found: fields.len(),
            });
        }
        if !seen_ids.insert(sample_id.clone()) {
            return Err(Error::DuplicateSampleId { row, id: sample_id });
        }
        let raw_path = fields[cols[1]];
        let image_path = if Path::new(raw_path).is_absolute() {
            PathBuf::from(raw_path)
        } else {
            base.join(raw_path)
        };

        let mut labels = [0usize; 4];
        let mut canonical = [""; 4];
        for (t, task) in TASKS.iter().enumerate() {
            let raw = fields[cols[2 + t]];
            let encoded = taxonomy.encode_label(*task, raw).map_err(|e| Error::ManifestRow {
                row,
                source: Box::new(e),
            })?;
            labels[t] = encoded;
            canonical[t] = taxonomy.decode_label(*task, encoded).expect("just encoded");
        }

        records.push(SampleRecord {
            sample_id,
            image_path,
            dynasty: canonical[0].to_string(),
            ware: canonical[1].to_string(),
            glaze: canonical[2].to_string(),
            typ: canonical[3].to_string(),
            labels,
        });
    }

    if records.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(records)
}

/// Writes a manifest with the canonical header and relative or absolute
/// paths exactly as given per row.
pub fn write_manifest(path: &Path, rows: &[(String, String, [String; 4])]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&MANIFEST_COLUMNS.join(","));
    out.push('\n');
    for (id, image_path, labels) in rows {
        for field in [id, image_path].into_iter().chain(labels.iter()) {
            if field.contains(',') || field.contains('\n') {
                return Err(Error::InvalidValue {
                    key: "manifest field".into(),
                    detail: format!("`{field}` contains the delimiter"),
                });
            }
        }
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            id, image_path, labels[0], labels[1], labels[2], labels[3]
        ));
    }
    std::fs::write(path, out)
        .map_err(|e| Error::io(format!("writing manifest {}", path.display()), e))
}
