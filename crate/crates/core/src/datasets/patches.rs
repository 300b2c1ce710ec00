use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vision::{crop_resize, GrayFrame, Roi};

pub const NON_LIP: usize = 0;
pub const LIP: usize = 1;

/// Minimum IoU with the mouth box for a lip patch.
pub const POSITIVE_IOU: f64 = 0.5;
/// Maximum IoU with the mouth box for a non-lip patch.
pub const NEGATIVE_IOU: f64 = 0.1;

const ATTEMPTS_PER_PATCH: usize = 200;

/// Lip / non-lip image patches cut from video frames.
#[derive(Debug, Clone)]
pub struct PatchDataset {
    /// `[N, 1, h, w]`, values in `[0, 1]`.
    pub patches: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Source box of every patch, in frame pixels.
    pub boxes: Vec<Roi>,
    /// Index into the source list of every patch.
    pub sources: Vec<usize>,
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == LIP).count()
    }

    /// Patch `i` as `[1, h, w]`.
    pub fn patch(&self, i: usize) -> Result<Tensor<f32>> {
        self.patches.index_outer(i)
    }
}

/// Samples `n_patches` boxes with the patch aspect ratio: half overlapping the
/// mouth (IoU ≥ 0.5), half away from it (IoU ≤ 0.1), each resized to
/// `patch_w × patch_h`.
pub fn build_patch_dataset(
    sources: &[(GrayFrame, Roi)],
    patch_w: usize,
    patch_h: usize,
    n_patches: usize,
    seed: u64,
) -> Result<PatchDataset> {
    if sources.is_empty() {
        return Err(Error::Empty("patch sources"));
    }
    if n_patches == 0 {
        return Err(Error::Empty("patch request"));
    }
    let aspect = patch_w as f64 / patch_h as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = n_patches / 2;
    let mut wanted: Vec<usize> = std::iter::repeat(LIP)
        .take(n_pos)
        .chain(std::iter::repeat(NON_LIP).take(n_patches - n_pos))
        .collect();
    wanted.shuffle(&mut rng);

    let mut data = Vec::with_capacity(n_patches * patch_w * patch_h);
    let mut boxes = Vec::with_capacity(n_patches);
    let mut picked = Vec::with_capacity(n_patches);
    for &label in &wanted {
        let mut found = None;
        for _ in 0..ATTEMPTS_PER_PATCH {
            let src = rng.gen_range(0..sources.len());
            let (frame, mouth) = &sources[src];
            let (fw, fh) = (frame.width() as f64, frame.height() as f64);
            let candidate = if label == LIP {
                let w = mouth.width * rng.gen_range(0.85..1.15);
                let h = w / aspect;
                let (cx, cy) = mouth.center();
                let cx = cx + rng.gen_range(-0.15..0.15) * mouth.width;
                let cy = cy + rng.gen_range(-0.15..0.15) * mouth.height;
                Roi::new(cx - w / 2.0, cy - h / 2.0, w, h)
            } else {
                let w = (mouth.width * rng.gen_range(0.7..1.3)).min(fw);
                let h = w / aspect;
                if h > fh {
                    continue;
                }
                Roi::new(rng.gen_range(0.0..=fw - w), rng.gen_range(0.0..=fh - h), w, h)
            };
            if !candidate.within(frame.width(), frame.height()) {
                continue;
            }
            let iou = candidate.iou(mouth);
            let ok = if label == LIP { iou >= POSITIVE_IOU } else { iou <= NEGATIVE_IOU };
            if ok {
                found = Some((src, candidate));
                break;
            }
        }
        let (src, roi) = found.ok_or_else(|| {
            Error::PatchBudget(format!(
                "no {} patch found in {ATTEMPTS_PER_PATCH} attempts",
                if label == LIP { "lip" } else { "non-lip" }
            ))
        })?;
        data.extend_from_slice(crop_resize(&sources[src].0, &roi, patch_w, patch_h)?.pixels());
        boxes.push(roi);
        picked.push(src);
    }
    Ok(PatchDataset {
        patches: Tensor::new(&[n_patches, 1, patch_h, patch_w], data)?,
        labels: wanted,
        boxes,
        sources: picked,
    })
}
