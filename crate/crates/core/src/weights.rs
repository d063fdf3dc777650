//! Weight archives, pretrained backbone resolution and training checkpoints.
//!
//! Archive layout (little-endian):
//!   magic `PWTA`, format version u32, tensor count u32, then per tensor:
//!   name length u16 + UTF-8 name, rank u8, dims u32 each, f32 data;
//!   trailing u64 FNV-1a checksum over everything before it.
//!
//! Pretrained backbone archives are plain archives whose tensor names match
//! the backbone's own parameter/buffer paths (no `backbone.` prefix). They
//! are resolved from an explicit directory or the `PORCELAIN_WEIGHTS_DIR`
//! environment variable as `<arch>.weights`.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::models::{Arch, BackboneNet, ModelSpec, MultiTaskModel};
use crate::taxonomy::TaskTaxonomy;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PWTA";
const VERSION: u32 = 1;

/// Environment variable naming the offline pretrained-weights cache.
pub const WEIGHTS_DIR_ENV: &str = "PORCELAIN_WEIGHTS_DIR";

/// Serializes named tensors.
pub fn save_tensors(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut h = ContentHash::new();
    h.update(&buf);
    buf.extend_from_slice(&h.finish().to_le_bytes());

    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Deserializes an archive written by [`save_tensors`].
pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let corrupt = |detail: &str| Error::CorruptArchive {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    let buf = std::fs::read(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if buf.len() < 20 || &buf[0..4] != MAGIC {
        return Err(corrupt("bad magic or truncated header"));
    }
    let payload_len = buf.len() - 8;
    let mut h = ContentHash::new();
    h.update(&buf[..payload_len]);
    let stored = u64::from_le_bytes(buf[payload_len..].try_into().unwrap());
    if h.finish() != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;

    let mut pos = 12usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > payload_len {
            return Err(corrupt("unexpected end of archive"));
        }
        let s = &buf[pos..pos + n];
        pos += n;
        Ok(s)
    };

    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|_| corrupt("tensor name is not UTF-8"))?
            .to_string();
        let rank = take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let raw = take(len * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::from_vec(&shape, data)));
    }
    if pos != payload_len {
        return Err(corrupt("trailing bytes after last tensor"));
    }
    Ok(entries)
}

/// Full model state (parameters plus buffers) as named tensors.
pub fn model_state(model: &mut MultiTaskModel) -> Vec<(String, Tensor)> {
    let mut entries = Vec::new();
    model.for_each_param(&mut |n, p| entries.push((n, p.value.clone())));
    model.for_each_buffer(&mut |n, t| entries.push((n, t.clone())));
    entries
}

/// Backbone-only state with unprefixed names, the pretrained archive layout.
pub fn backbone_state(backbone: &mut BackboneNet) -> Vec<(String, Tensor)> {
    let mut entries = Vec::new();
    backbone.for_each_param("", &mut |n, p| entries.push((n, p.value.clone())));
    backbone.for_each_buffer("", &mut |n, t| entries.push((n, t.clone())));
    entries
}

/// Locates the pretrained archive for an architecture.
pub fn resolve_pretrained_path(arch: Arch, weights_dir: Option<&Path>) -> Result<PathBuf> {
    let dir: Option<PathBuf> = weights_dir
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(WEIGHTS_DIR_ENV).map(PathBuf::from));
    let file = format!("{}.weights", arch.name());
    match dir {
        Some(dir) => {
            let path = dir.join(&file);
            if path.is_file() {
                Ok(path)
            } else {
                Err(Error::WeightsUnavailable {
                    arch: arch.name().to_string(),
                    searched: path.display().to_string(),
                })
            }
        }
        None => Err(Error::WeightsUnavailable {
            arch: arch.name().to_string(),
            searched: format!("{file} (set {WEIGHTS_DIR_ENV} or pass a weights directory)"),
        }),
    }
}

/// Loads pretrained weights into a backbone. Every backbone tensor must be
/// present in the archive with a matching shape; extra entries are ignored.
pub fn load_pretrained_backbone(
    backbone: &mut BackboneNet,
    arch: Arch,
    weights_dir: Option<&Path>,
) -> Result<()> {
    let path = resolve_pretrained_path(arch, weights_dir)?;
    let entries = load_tensors(&path)?;
    let map: HashMap<String, Tensor> = entries.into_iter().collect();
    let mut failure: Option<Error> = None;
    let mut apply = |name: String, dst: &mut Tensor| {
        if failure.is_some() {
            return;
        }
        match map.get(&name) {
            Some(src) if src.shape() == dst.shape() => {
                dst.data_mut().copy_from_slice(src.data())
            }
            Some(src) => {
                failure = Some(Error::ShapeMismatch {
                    expected: format!("{:?} for `{name}`", dst.shape()),
                    got: format!("{:?}", src.shape()),
                })
            }
            None => {
                failure = Some(Error::CorruptArchive {
                    path: path.display().to_string(),
                    detail: format!("missing tensor `{name}`"),
                })
            }
        }
    };
    backbone.for_each_param("", &mut |n, p| apply(n, &mut p.value));
    backbone.for_each_buffer("", &mut |n, t| apply(n, t));
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Exports a model's backbone in the pretrained archive layout (used to
/// stock offline caches and build test fixtures).
pub fn export_backbone(model: &mut MultiTaskModel, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    model.for_each_param(&mut |n, p| {
        if let Some(stripped) = n.strip_prefix("backbone.") {
            entries.push((stripped.to_string(), p.value.clone()));
        }
    });
    model.for_each_buffer(&mut |n, t| {
        if let Some(stripped) = n.strip_prefix("backbone.") {
            entries.push((stripped.to_string(), t.clone()));
        }
    });
    save_tensors(path, &entries)
}

/// Sidecar descriptor stored next to a checkpoint archive.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub taxonomy_fingerprint: String,
    pub config_hash: String,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl CheckpointMeta {
    pub fn render(&self) -> String {
        format!(
            "arch={}\npretrained={}\nfreeze_backbone={}\ninput_side={}\ninit_seed={}\n\
             taxonomy_fingerprint={}\nconfig_hash={}\nbest_epoch={}\nbest_val_loss={}\n",
            self.spec.arch,
            self.spec.pretrained,
            self.spec.freeze_backbone,
            self.spec.input_side,
            self.spec.init_seed,
            self.taxonomy_fingerprint,
            self.config_hash,
            self.best_epoch,
            self.best_val_loss
        )
    }

    pub fn parse(text: &str) -> Result<CheckpointMeta> {
        let mut map = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    map.insert(k.trim().to_string(), v.trim().to_string());
                }
                None => {
                    return Err(Error::ParseError {
                        line: idx + 1,
                        text: line.to_string(),
                    })
                }
            }
        }
        let get = |k: &str| -> Result<&String> {
            map.get(k).ok_or_else(|| Error::InvalidValue {
                key: k.to_string(),
                detail: "missing from checkpoint descriptor".into(),
            })
        };
        let parse_err = |k: &str, v: &str| Error::InvalidValue {
            key: k.to_string(),
            detail: format!("cannot parse `{v}`"),
        };
        Ok(CheckpointMeta {
            spec: ModelSpec {
                arch: Arch::parse(get("arch")?)?,
                pretrained: get("pretrained")?.parse().map_err(|_| parse_err("pretrained", get("pretrained").unwrap()))?,
                freeze_backbone: get("freeze_backbone")?
                    .parse()
                    .map_err(|_| parse_err("freeze_backbone", get("freeze_backbone").unwrap()))?,
                input_side: get("input_side")?.parse().map_err(|_| parse_err("input_side", get("input_side").unwrap()))?,
                init_seed: get("init_seed")?.parse().map_err(|_| parse_err("init_seed", get("init_seed").unwrap()))?,
            },
            taxonomy_fingerprint: get("taxonomy_fingerprint")?.clone(),
            config_hash: get("config_hash")?.clone(),
            best_epoch: get("best_epoch")?.parse().map_err(|_| parse_err("best_epoch", get("best_epoch").unwrap()))?,
            best_val_loss: get("best_val_loss")?.parse().map_err(|_| parse_err("best_val_loss", get("best_val_loss").unwrap()))?,
        })
    }
}

/// Writes `best.ckpt` plus the `spec.txt` sidecar.
pub fn save_checkpoint(model: &mut MultiTaskModel, dir: &Path, meta: &CheckpointMeta) -> Result<()> {
    let entries = model_state(model);
    save_tensors(&dir.join("best.ckpt"), &entries)?;
    std::fs::write(dir.join("spec.txt"), meta.render())
        .map_err(|e| Error::io(format!("writing {}", dir.join("spec.txt").display()), e))
}

/// Rebuilds a model from a checkpoint directory. Refuses a checkpoint whose
/// taxonomy fingerprint does not match the supplied taxonomy.
pub fn load_checkpoint(
    dir: &Path,
    taxonomy: &TaskTaxonomy,
) -> Result<(MultiTaskModel, CheckpointMeta)> {
    let sidecar = dir.join("spec.txt");
    let text = std::fs::read_to_string(&sidecar)
        .map_err(|e| Error::io(format!("reading {}", sidecar.display()), e))?;
    let meta = CheckpointMeta::parse(&text)?;
    let expected = taxonomy.fingerprint();
    if meta.taxonomy_fingerprint != expected {
        return Err(Error::TaxonomyMismatch {
            expected,
            found: meta.taxonomy_fingerprint.clone(),
        });
    }
    // Rebuild without touching the pretrained cache: the checkpoint itself
    // carries every tensor.
    let build_spec = ModelSpec {
        pretrained: false,
        freeze_backbone: false,
        ..meta.spec.clone()
    };
    let mut model = crate::models::build_model(&build_spec, taxonomy, None)?;
    let path = dir.join("best.ckpt");
    let entries = load_tensors(&path)?;
    let map: HashMap<String, Tensor> = entries.into_iter().collect();
    let mut failure: Option<Error> = None;
    model.for_each_param(&mut |name, p| {
        if failure.is_some() {
            return;
        }
        match map.get(&name) {
            Some(src) if src.shape() == p.value.shape() => {
                p.value.data_mut().copy_from_slice(src.data())
            }
            Some(src) => {
                failure = Some(Error::ShapeMismatch {
                    expected: format!("{:?} for `{name}`", p.value.shape()),
                    got: format!("{:?}", src.shape()),
                })
            }
            None => {
                failure = Some(Error::CorruptArchive {
                    path: path.display().to_string(),
                    detail: format!("missing tensor `{name}`"),
                })
            }
        }
    });
    if failure.is_none() {
        model.for_each_buffer(&mut |name, t| {
            if failure.is_some() {
                return;
            }
            match map.get(&name) {
                Some(src) if src.shape() == t.shape() => t.data_mut().copy_from_slice(src.data()),
                Some(src) => {
                    failure = Some(Error::ShapeMismatch {
                        expected: format!("{:?} for `{name}`", t.shape()),
                        got: format!("{:?}", src.shape()),
                    })
                }
                None => {
                    failure = Some(Error::CorruptArchive {
                        path: path.display().to_string(),
                        detail: format!("missing tensor `{name}`"),
                    })
                }
            }
        });
    }
    if let Some(e) = failure {
        return Err(e);
    }
    // restore the stored freeze/pretrained flags for faithful reporting
    if meta.spec.freeze_backbone {
        let mut backbone_prefix = true;
        model.for_each_param(&mut |name, p| {
            backbone_prefix = name.starts_with("backbone.");
            if backbone_prefix {
                p.trainable = false;
            }
        });
    }
    model.spec = meta.spec.clone();
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.weights");
        let entries = vec![
            ("a.weight".to_string(), Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, 9.9])),
            ("b.bias".to_string(), Tensor::from_vec(&[1], vec![42.0])),
        ];
        save_tensors(&path, &entries).unwrap();
        let loaded = load_tensors(&path).unwrap();
        assert_eq!(entries, loaded);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.weights");
        save_tensors(&path, &[("x".into(), Tensor::zeros(&[4]))]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_tensors(&path), Err(Error::CorruptArchive { .. })));
    }

    #[test]
    fn missing_weights_dir_reports_unavailable() {
        let err = resolve_pretrained_path(Arch::Mobilenetv2, Some(Path::new("/nonexistent/dir")))
            .unwrap_err();
        assert!(matches!(err, Error::WeightsUnavailable { .. }));
    }

    #[test]
    fn checkpoint_meta_round_trip() {
        let meta = CheckpointMeta {
            spec: ModelSpec {
                arch: Arch::Vgg16,
                pretrained: true,
                freeze_backbone: true,
                input_side: 96,
                init_seed: 5,
            },
            taxonomy_fingerprint: "abc123".into(),
            config_hash: "deadbeef".into(),
            best_epoch: 17,
            best_val_loss: 0.123456789,
        };
        let parsed = CheckpointMeta::parse(&meta.render()).unwrap();
        assert_eq!(meta, parsed);
    }
}
