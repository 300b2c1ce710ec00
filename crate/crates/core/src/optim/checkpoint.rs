//! Checkpoint files: magic `NCKP`, u32 little-endian header length, a JSON
//! header (architecture descriptor, training metadata, tensor table), then one
//! record per tensor: u16 little-endian name length, name bytes, `NTSR` tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::{tensor_from_bytes, tensor_to_bytes, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"NCKP";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Epoch (1-based) whose parameters were kept; 0 for untrained checkpoints.
    pub epoch: usize,
    pub seed: u64,
    pub steps: usize,
    pub history: Vec<EpochRecord>,
    /// Parameter-name patterns that inference drops (e.g. a softmax head).
    #[serde(default)]
    pub removable: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    dims: Vec<usize>,
    elements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    architecture: serde_json::Value,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub architecture: serde_json::Value,
    pub metadata: TrainingMetadata,
    pub params: ParamSet<f32>,
}

/// Glob-style parameter name pattern; `*` matches any run of characters.
pub fn name_matches(pattern: &str, name: &str) -> bool {
    fn go(p: &[u8], n: &[u8]) -> bool {
        match p.split_first() {
            None => n.is_empty(),
            Some((b'*', rest)) => (0..=n.len()).any(|i| go(rest, &n[i..])),
            Some((c, rest)) => n.first() == Some(c) && go(rest, &n[1..]),
        }
    }
    go(pattern.as_bytes(), name.as_bytes())
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            architecture: self.architecture.clone(),
            metadata: self.metadata.clone(),
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    dtype: f32::DTYPE.name().to_string(),
                    dims: t.dims().to_vec(),
                    elements: t.len(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, t) in self.params.iter() {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.extend_from_slice(&tensor_to_bytes(t));
        }
        Ok(out)
    }

    /// Decodes a checkpoint, keeping only tensors accepted by `keep`. Every
    /// record is still validated against the header.
    pub fn from_bytes_filtered(bytes: &[u8], keep: impl Fn(&str) -> bool) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated("checkpoint magic".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic { expected: "NCKP" });
        }
        if bytes.len() < 8 {
            return Err(Error::Truncated("checkpoint header length".into()));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let mut pos = 8;
        if bytes.len() < pos + header_len {
            return Err(Error::Truncated("checkpoint header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[pos..pos + header_len])
            .map_err(|e| Error::HeaderMismatch(format!("unreadable header: {e}")))?;
        pos += header_len;

        let mut params = ParamSet::new();
        for entry in &header.tensors {
            if bytes.len() < pos + 2 {
                return Err(Error::Truncated(format!("record for `{}`", entry.name)));
            }
            let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().expect("2 bytes")) as usize;
            pos += 2;
            if bytes.len() < pos + name_len {
                return Err(Error::Truncated(format!("name of `{}`", entry.name)));
            }
            let name = std::str::from_utf8(&bytes[pos..pos + name_len])
                .map_err(|_| Error::HeaderMismatch("tensor name is not UTF-8".into()))?;
            pos += name_len;
            if name != entry.name {
                return Err(Error::HeaderMismatch(format!("header lists `{}`, payload has `{name}`", entry.name)));
            }
            let (t, used): (Tensor<f32>, usize) = match tensor_from_bytes(&bytes[pos..]) {
                Err(Error::Truncated(m)) => return Err(Error::Truncated(format!("tensor `{name}`: {m}"))),
                Err(Error::BadMagic { .. }) => {
                    return Err(Error::HeaderMismatch(format!("tensor `{name}` has a corrupt record")))
                }
                other => other?,
            };
            pos += used;
            if t.dims() != entry.dims.as_slice() || t.len() != entry.elements {
                return Err(Error::HeaderMismatch(format!(
                    "`{name}`: header {:?} ({} elements), payload {:?}",
                    entry.dims,
                    entry.elements,
                    t.dims()
                )));
            }
            if keep(name) {
                params.insert(name, t);
            }
        }
        if pos != bytes.len() {
            return Err(Error::HeaderMismatch(format!("{} bytes beyond the last listed tensor", bytes.len() - pos)));
        }
        Ok(ModelCheckpoint {
            architecture: header.architecture,
            metadata: header.metadata,
            params,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_bytes_filtered(bytes, |_| true)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &ModelCheckpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingCheckpoint(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    ModelCheckpoint::from_bytes(&read(path.as_ref())?)
}

/// Loads only the tensors whose names match one of `patterns` (e.g. `enc.*`).
pub fn load_checkpoint_subset(path: impl AsRef<Path>, patterns: &[&str]) -> Result<ModelCheckpoint> {
    ModelCheckpoint::from_bytes_filtered(&read(path.as_ref())?, |name| {
        patterns.iter().any(|p| name_matches(p, name))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelCheckpoint {
        let mut params = ParamSet::new();
        params.insert("enc.conv1.w", Tensor::from_fn(&[2, 1, 3, 3], |i| i as f32 * 0.1).unwrap());
        params.insert("enc.conv1.b", Tensor::new(&[2], vec![0.5, -0.5]).unwrap());
        params.insert("dec.fc.w", Tensor::from_fn(&[4, 3], |i| -(i as f32)).unwrap());
        ModelCheckpoint {
            architecture: serde_json::json!({"kind": "cae", "layers": 2}),
            metadata: TrainingMetadata {
                epoch: 3,
                seed: 7,
                steps: 12,
                history: vec![EpochRecord {
                    epoch: 1,
                    train_loss: 0.25,
                    val_metric: 0.125,
                }],
                removable: vec![],
            },
            params,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save_checkpoint(&a, &sample()).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        assert_eq!(loaded, sample());
        save_checkpoint(&b, &loaded).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(ModelCheckpoint::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0, 0]);
        assert!(matches!(ModelCheckpoint::from_bytes(&extra), Err(Error::HeaderMismatch(_))));
        // Rename the first payload tensor so it disagrees with the header.
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut renamed = bytes.clone();
        renamed[8 + header_len + 2] = b'X';
        assert!(matches!(ModelCheckpoint::from_bytes(&renamed), Err(Error::HeaderMismatch(_))));
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_checkpoint("/nonexistent/lstm.ckpt").unwrap_err();
        assert!(matches!(err, Error::MissingCheckpoint(_)));
        assert!(err.to_string().contains("missing checkpoint"));
    }

    #[test]
    fn subset_filter_keeps_encoder_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        save_checkpoint(&p, &sample()).unwrap();
        let enc = load_checkpoint_subset(&p, &["enc.*"]).unwrap();
        let names: Vec<&str> = enc.params.names().collect();
        assert_eq!(names, vec!["enc.conv1.b", "enc.conv1.w"]);
    }

    #[test]
    fn glob_matching() {
        assert!(name_matches("enc.*", "enc.conv1.w"));
        assert!(!name_matches("enc.*", "dec.conv1.w"));
        assert!(name_matches("*.w", "dec.fc.w"));
        assert!(name_matches("cnn.head.*", "cnn.head.b"));
        assert!(name_matches("exact", "exact"));
        assert!(!name_matches("exact", "exactly"));
    }
}
