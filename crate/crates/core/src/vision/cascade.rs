//! Staged rectangle-feature cascade evaluated over integral images.
//!
//! Detection runs on the 8-bit quantized frame so every rectangle sum is an
//! exact integer. For a window of area `A` with level sum `S` and squared sum
//! `Q`, the standard deviation is `sqrt((A·Q − S²) / A²) / 255`, floored at
//! `1e-6`. A feature is `Σ weight · mean(rect)` with rectangle means in
//! `[0, 1]` units, accumulated in rectangle order. A weak classifier votes
//! `left` when `feature < threshold · stddev`, else `right`; a stage passes
//! when its vote sum exceeds the stage threshold.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vision::integral::LevelIntegrals;
use crate::vision::{GrayFrame, Roi};

const STDDEV_FLOOR: f64 = 1e-6;

/// `[x, y, w, h, weight]` in base-window pixels.
pub type FeatureRect = [f64; 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakClassifier {
    pub rects: Vec<FeatureRect>,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub threshold: f64,
    pub weak: Vec<WeakClassifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    /// `[width, height]`
    pub base_window: [usize; 2],
    pub stages: Vec<Stage>,
}

const BUNDLED: &str = include_str!("../../assets/mouth_cascade.json");

impl CascadeModel {
    /// Hand-built mouth cascade shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED).expect("bundled cascade is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: CascadeModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: CascadeModel = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let [bw, bh] = self.base_window;
        if bw == 0 || bh == 0 {
            return Err(Error::DegenerateCascade(format!("base window {bw}x{bh}")));
        }
        if self.stages.is_empty() {
            return Err(Error::DegenerateCascade("no stages".into()));
        }
        for (s, stage) in self.stages.iter().enumerate() {
            if stage.weak.is_empty() {
                return Err(Error::DegenerateCascade(format!("stage {s} has no weak classifiers")));
            }
            for weak in &stage.weak {
                if weak.rects.is_empty() {
                    return Err(Error::DegenerateCascade(format!("stage {s} has a feature without rectangles")));
                }
                for r in &weak.rects {
                    let [x, y, w, h, _] = *r;
                    let inside = x >= 0.0 && y >= 0.0 && w >= 1.0 && h >= 1.0 && x + w <= bw as f64 && y + h <= bh as f64;
                    if !inside || r.iter().any(|v| !v.is_finite()) {
                        return Err(Error::DegenerateCascade(format!(
                            "stage {s}: rectangle {r:?} outside the {bw}x{bh} base window"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub scale_factor: f64,
    /// Smallest window `[width, height]`; `None` uses the base window.
    pub min_size: Option<[usize; 2]>,
    pub step: usize,
    pub merge_iou: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            scale_factor: 1.1,
            min_size: None,
            step: 2,
            merge_iou: 0.4,
        }
    }
}

/// Integer rectangle inside a scaled window, relative to the window origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaledRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// One window size of the multi-scale scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanScale {
    pub scale: f64,
    pub width: usize,
    pub height: usize,
}

/// A candidate window in frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Window {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub fn roi(&self) -> Roi {
        Roi::new(self.x as f64, self.y as f64, self.width as f64, self.height as f64)
    }
}

/// Rounds a base-window rectangle to the given scale, keeping it inside the
/// scaled window and at least one pixel wide and tall.
pub fn scale_rect(rect: &FeatureRect, scale: f64, window_w: usize, window_h: usize) -> ScaledRect {
    let x = ((rect[0] * scale).round() as usize).min(window_w - 1);
    let y = ((rect[1] * scale).round() as usize).min(window_h - 1);
    let width = ((rect[2] * scale).round() as usize).clamp(1, window_w - x);
    let height = ((rect[3] * scale).round() as usize).clamp(1, window_h - y);
    ScaledRect { x, y, width, height }
}

/// Window sizes `round(base · s)` for `s = s0 · factor^k` while the window fits.
pub fn scan_scales(cascade: &CascadeModel, params: &DetectorParams, frame_w: usize, frame_h: usize) -> Result<Vec<ScanScale>> {
    let [bw, bh] = cascade.base_window;
    let [min_w, min_h] = params.min_size.unwrap_or([bw, bh]);
    if min_w < bw || min_h < bh {
        return Err(Error::Config(format!("min_size {min_w}x{min_h} is below the {bw}x{bh} base window")));
    }
    if !(params.scale_factor > 1.0) || params.step == 0 {
        return Err(Error::Config(format!("invalid detector parameters {params:?}")));
    }
    let mut scale = (min_w as f64 / bw as f64).max(min_h as f64 / bh as f64);
    let mut scales = Vec::new();
    loop {
        let width = (bw as f64 * scale).round() as usize;
        let height = (bh as f64 * scale).round() as usize;
        if width > frame_w || height > frame_h {
            break;
        }
        if scales.last().map_or(true, |s: &ScanScale| (s.width, s.height) != (width, height)) {
            scales.push(ScanScale { scale, width, height });
        }
        scale *= params.scale_factor;
    }
    Ok(scales)
}

/// Every window position of the scan, scale-major then row-major.
pub fn scan_windows(scales: &[ScanScale], step: usize, frame_w: usize, frame_h: usize) -> Vec<(usize, Window)> {
    let mut out = Vec::new();
    for (k, s) in scales.iter().enumerate() {
        let mut y = 0;
        while y + s.height <= frame_h {
            let mut x = 0;
            while x + s.width <= frame_w {
                out.push((
                    k,
                    Window {
                        x,
                        y,
                        width: s.width,
                        height: s.height,
                    },
                ));
                x += step;
            }
            y += step;
        }
    }
    out
}

/// Window standard deviation in `[0, 1]` units from exact integer sums.
pub fn window_stddev(area: u64, sum: u64, squares: u64) -> f64 {
    let num = area as u128 * squares as u128 - sum as u128 * sum as u128;
    let var = num as f64 / (area as f64 * area as f64) / (255.0 * 255.0);
    var.sqrt().max(STDDEV_FLOOR)
}

struct CompiledWeak {
    rects: Vec<(ScaledRect, f64)>,
    threshold: f64,
    left: f64,
    right: f64,
}

struct CompiledStage {
    threshold: f64,
    weak: Vec<CompiledWeak>,
}

fn compile(cascade: &CascadeModel, s: &ScanScale) -> Vec<CompiledStage> {
    cascade
        .stages
        .iter()
        .map(|stage| CompiledStage {
            threshold: stage.threshold,
            weak: stage
                .weak
                .iter()
                .map(|w| CompiledWeak {
                    rects: w.rects.iter().map(|r| (scale_rect(r, s.scale, s.width, s.height), r[4])).collect(),
                    threshold: w.threshold,
                    left: w.left,
                    right: w.right,
                })
                .collect(),
        })
        .collect()
}

fn window_passes(stages: &[CompiledStage], ii: &LevelIntegrals, win: &Window) -> bool {
    let area = (win.width * win.height) as u64;
    let sum = ii.sum.rect_sum(win.x, win.y, win.width, win.height);
    let squares = ii.squares.rect_sum(win.x, win.y, win.width, win.height);
    let sigma = window_stddev(area, sum, squares);
    stages.iter().all(|stage| {
        let mut votes = 0.0;
        for weak in &stage.weak {
            let mut feature = 0.0;
            for (r, weight) in &weak.rects {
                let s = ii.sum.rect_sum(win.x + r.x, win.y + r.y, r.width, r.height);
                feature += weight * (s as f64 / (r.width * r.height) as f64 / 255.0);
            }
            votes += if feature < weak.threshold * sigma { weak.left } else { weak.right };
        }
        votes > stage.threshold
    })
}

/// Windows that pass every stage, before merging.
pub fn detect_windows(g: &GrayFrame, cascade: &CascadeModel, params: &DetectorParams) -> Result<Vec<Window>> {
    cascade.validate()?;
    let scales = scan_scales(cascade, params, g.width(), g.height())?;
    let ii = LevelIntegrals::from_frame(g);
    let compiled: Vec<Vec<CompiledStage>> = scales.iter().map(|s| compile(cascade, s)).collect();
    Ok(scan_windows(&scales, params.step, g.width(), g.height())
        .into_iter()
        .filter(|(k, w)| window_passes(&compiled[*k], &ii, w))
        .map(|(_, w)| w)
        .collect())
}

/// Groups windows transitively linked by IoU ≥ `min_iou` and averages each
/// group. Groups are ordered by their first member.
pub fn merge_detections(windows: &[Window], min_iou: f64) -> Vec<Roi> {
    let n = windows.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if windows[i].roi().iou(&windows[j].roi()) >= min_iou {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<(usize, [f64; 4], usize)> = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        let root = find(&mut parent, i);
        let slot = match groups.iter().position(|g| g.0 == root) {
            Some(p) => p,
            None => {
                groups.push((root, [0.0; 4], 0));
                groups.len() - 1
            }
        };
        let g = &mut groups[slot];
        g.1[0] += w.x as f64;
        g.1[1] += w.y as f64;
        g.1[2] += w.width as f64;
        g.1[3] += w.height as f64;
        g.2 += 1;
    }
    groups
        .into_iter()
        .map(|(_, s, count)| {
            let c = count as f64;
            Roi::new(s[0] / c, s[1] / c, s[2] / c, s[3] / c)
        })
        .collect()
}

/// Multi-scale sliding-window detection followed by IoU merging.
pub fn cascade_detect(g: &GrayFrame, cascade: &CascadeModel, params: &DetectorParams) -> Result<Vec<Roi>> {
    let windows = detect_windows(g, cascade, params)?;
    Ok(merge_detections(&windows, params.merge_iou))
}
