use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{Profile, VideoSample};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, Tensor};

/// What manifest paths point at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Directories of per-frame images.
    Raw,
    /// `NTSR` video tensors `[T, 1, H, W]`.
    #[default]
    Frames,
    /// `NTSR` feature sequences `[T, d]`.
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub vocabulary: Vec<String>,
    pub profile: Profile,
    #[serde(default)]
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
    pub speaker: u32,
    pub source_len: usize,
}

/// Records with a label and a speaker, the inputs of every split protocol.
pub trait Labeled {
    fn label(&self) -> usize;
    fn speaker(&self) -> u32;
}

impl Labeled for ManifestRecord {
    fn label(&self) -> usize {
        self.label
    }

    fn speaker(&self) -> u32 {
        self.speaker
    }
}

impl Labeled for crate::datasets::VideoSample {
    fn label(&self) -> usize {
        self.label
    }

    fn speaker(&self) -> u32 {
        self.speaker
    }
}

/// Dataset listing: a header line followed by one JSON record per line.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
    /// Directory that relative record paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(header: ManifestHeader, records: Vec<ManifestRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let m = Manifest {
            header,
            records,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.header.vocabulary
    }

    pub fn profile(&self) -> Profile {
        self.header.profile
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.header.vocabulary.len();
        if let Some(r) = self.records.iter().find(|r| r.label >= k) {
            return Err(Error::LabelOutOfRange { label: r.label, classes: k });
        }
        Ok(())
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.root.join(&record.path)
        }
    }

    /// Path of `record` below the manifest root. Absolute paths outside the
    /// root keep all their components, so distinct records never collide.
    pub fn relative_path(&self, record: &ManifestRecord) -> PathBuf {
        let path = &record.path;
        if !path.is_absolute() {
            return path.clone();
        }
        match path.strip_prefix(&self.root) {
            Ok(rel) => rel.to_path_buf(),
            Err(_) => path
                .components()
                .filter(|c| matches!(c, std::path::Component::Normal(_)))
                .collect(),
        }
    }

    /// Errors on the first record whose path does not exist.
    pub fn check_paths(&self) -> Result<()> {
        for r in &self.records {
            let p = self.resolve(r);
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        Ok(())
    }

    /// Same header and root, records picked by index.
    pub fn subset(&self, indices: &[usize]) -> Result<Manifest> {
        let records = indices
            .iter()
            .map(|&i| {
                self.records.get(i).cloned().ok_or(Error::InvalidSplit(format!(
                    "index {i} out of range for {} records",
                    self.records.len()
                )))
            })
            .collect::<Result<_>>()?;
        Ok(Manifest {
            header: self.header.clone(),
            records,
            root: self.root.clone(),
        })
    }

    /// Same records with paths made relative to `new_root` where possible and
    /// absolute otherwise, so the manifest can be written into `new_root`.
    pub fn rebase(&self, new_root: impl AsRef<Path>) -> Result<Manifest> {
        let absolute = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
        let new_root = absolute(new_root.as_ref())?;
        let records = self
            .records
            .iter()
            .map(|r| {
                let full = absolute(&self.resolve(r))?;
                let path = full.strip_prefix(&new_root).map(Path::to_path_buf).unwrap_or(full);
                Ok(ManifestRecord { path, ..r.clone() })
            })
            .collect::<Result<_>>()?;
        Ok(Manifest {
            header: self.header.clone(),
            records,
            root: new_root,
        })
    }

    /// Every record of a frames manifest as an in-memory sample.
    pub fn load_samples(&self) -> Result<Vec<VideoSample>> {
        use rayon::prelude::*;
        if self.header.stage != Stage::Frames {
            return Err(Error::Config(format!("expected a frames manifest, got {:?}", self.header.stage)));
        }
        let profile = self.profile();
        self.records
            .par_iter()
            .map(|r| {
                let frames: Tensor<f32> = read_tensor(self.resolve(r))?;
                profile.check_video(frames.dims())?;
                Ok(VideoSample {
                    frames,
                    label: r.label,
                    speaker: r.speaker,
                    source_len: r.source_len,
                })
            })
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut line = serde_json::to_string(&self.header)?;
        line.push('\n');
        for r in &self.records {
            line.push_str(&serde_json::to_string(r)?);
            line.push('\n');
        }
        out.write_all(line.as_bytes()).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; relative record paths resolve against its directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {line}: {e}"),
        };
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                message: "missing header line".into(),
            })?
            .map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader = serde_json::from_str(&header_line).map_err(|e| parse_err(1, e))?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 2, e))?);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::new(header, records, root)
    }
}

/// Reads the tensors of `indices`, checks them against the profile and
/// stacks them into `[N, T, 1, H, W]`.
pub fn load_batch(manifest: &Manifest, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
    if indices.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let profile = manifest.profile();
    let mut videos = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let record = manifest.records.get(i).ok_or(Error::InvalidSplit(format!(
            "batch index {i} out of range for {} records",
            manifest.len()
        )))?;
        let t: Tensor<f32> = read_tensor(manifest.resolve(record))?;
        profile.check_video(t.dims())?;
        videos.push(t);
        labels.push(record.label);
    }
    Ok((Tensor::stack(&videos)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::write_tensor;

    fn fixture(dir: &Path, profile: Profile, n: usize) -> Manifest {
        let records = (0..n)
            .map(|i| {
                let name = format!("v{i}.ntsr");
                let t = Tensor::from_fn(&profile.video_dims(), |j| ((i * 7 + j) % 11) as f32 / 10.0).unwrap();
                write_tensor(dir.join(&name), &t).unwrap();
                ManifestRecord {
                    path: name.into(),
                    label: i % 2,
                    speaker: i as u32,
                    source_len: profile.frames,
                }
            })
            .collect();
        Manifest::new(
            ManifestHeader {
                vocabulary: vec!["ma".into(), "pa".into()],
                profile,
                stage: Stage::Frames,
            },
            records,
            dir,
        )
        .unwrap()
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), Profile::desk(), 3);
        let path = dir.path().join("manifest.jsonl");
        m.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }

    #[test]
    fn single_index_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), Profile::desk(), 2);
        let (batch, labels) = load_batch(&m, &[1]).unwrap();
        let stored: Tensor<f32> = read_tensor(dir.path().join("v1.ntsr")).unwrap();
        assert_eq!(batch.data(), stored.data());
        assert_eq!(labels, vec![1]);
    }

    #[test]
    fn batch_of_two_has_batch_axis() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), Profile::desk(), 2);
        let (batch, _) = load_batch(&m, &[0, 1]).unwrap();
        assert_eq!(batch.dims(), &[2, 12, 1, 24, 36]);
    }

    #[test]
    fn wrong_frame_count_is_a_profile_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = fixture(dir.path(), Profile::miracl(), 1);
        m.header.profile = Profile::bbc();
        assert!(matches!(load_batch(&m, &[0]), Err(Error::ProfileMismatch { .. })));
    }

    #[test]
    fn rebased_manifest_resolves_the_same_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), Profile::desk(), 2);
        let sub = dir.path().join("splits");
        std::fs::create_dir_all(&sub).unwrap();
        m.rebase(&sub).unwrap().write(sub.join("train.jsonl")).unwrap();
        let back = Manifest::read(sub.join("train.jsonl")).unwrap();
        for (a, b) in m.records.iter().zip(&back.records) {
            assert_eq!(std::path::absolute(m.resolve(a)).unwrap(), back.resolve(b));
        }
        let inner = m.rebase(dir.path()).unwrap();
        assert_eq!(inner.records[0].path, PathBuf::from("v0.ntsr"));
        let moved = back.rebase("/elsewhere").unwrap();
        let rel = moved.relative_path(&moved.records[1]);
        assert!(rel.is_relative() && rel.ends_with("v1.ntsr") && rel.components().count() > 1);
    }

    #[test]
    fn samples_match_batches() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), Profile::desk(), 3);
        let samples = m.load_samples().unwrap();
        let (batch, _) = load_batch(&m, &[2]).unwrap();
        assert_eq!(samples[2].frames.data(), batch.data());
        assert_eq!(samples[1].label, 1);
    }

    #[test]
    fn labels_outside_vocabulary_are_rejected() {
        let header = ManifestHeader {
            vocabulary: vec!["a".into()],
            profile: Profile::desk(),
            stage: Stage::Frames,
        };
        let record = ManifestRecord {
            path: "x".into(),
            label: 1,
            speaker: 0,
            source_len: 1,
        };
        assert!(Manifest::new(header, vec![record], ".").is_err());
    }
}
