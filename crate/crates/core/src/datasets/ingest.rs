use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::datasets::manifest::{Manifest, ManifestHeader, ManifestRecord, Stage};
use crate::datasets::Profile;
use crate::error::{Error, Result};
use crate::vision::is_image_file;

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Builds a raw-stage manifest from `<root>/<word>/<speaker>/<clip>/` frame
/// image directories. Words and speakers are numbered in sorted name order.
pub fn manifest_from_frame_dirs(root: impl AsRef<Path>, profile: Profile) -> Result<Manifest> {
    let root = root.as_ref();
    let words = subdirs(root)?;
    if words.is_empty() {
        return Err(Error::Empty("corpus directory"));
    }
    let mut speakers = BTreeSet::new();
    for w in &words {
        for s in subdirs(w)? {
            speakers.insert(name(&s));
        }
    }
    let speakers: Vec<String> = speakers.into_iter().collect();
    let mut records = Vec::new();
    for (label, w) in words.iter().enumerate() {
        for s in subdirs(w)? {
            let speaker = speakers.binary_search(&name(&s)).expect("speaker collected above") as u32;
            for clip in subdirs(&s)? {
                let frames = fs::read_dir(&clip)
                    .map_err(|e| Error::io(&clip, e))?
                    .filter_map(|entry| entry.ok().map(|e| e.path()))
                    .filter(|p| p.is_file() && is_image_file(p))
                    .count();
                if frames == 0 {
                    continue;
                }
                records.push(ManifestRecord {
                    path: clip.strip_prefix(root).unwrap_or(&clip).to_path_buf(),
                    label,
                    speaker,
                    source_len: frames,
                });
            }
        }
    }
    Manifest::new(
        ManifestHeader {
            vocabulary: words.iter().map(|w| name(w)).collect(),
            profile,
            stage: Stage::Raw,
        },
        records,
        root,
    )
}
