use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vision::cascade::{cascade_detect, CascadeModel, DetectorParams};
use crate::vision::{GrayFrame, Roi};

/// Bilinear resampling of `roi` to `out_w × out_h`. Output corners sample the
/// ROI's corner pixel centers; coordinates are clamped to the frame.
pub fn crop_resize(g: &GrayFrame, roi: &Roi, out_w: usize, out_h: usize) -> Result<GrayFrame> {
    if !roi.within(g.width(), g.height()) {
        return Err(Error::RoiOutOfBounds {
            roi: format!("({:.2}, {:.2}, {:.2}, {:.2})", roi.x, roi.y, roi.width, roi.height),
            width: g.width(),
            height: g.height(),
        });
    }
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidShape(vec![out_h, out_w]));
    }
    let max_x = (g.width() - 1) as f64;
    let max_y = (g.height() - 1) as f64;
    let sample_axis = |origin: f64, extent: f64, out: usize, max: f64| -> Vec<(usize, usize, f32)> {
        let span = (extent - 1.0).max(0.0);
        (0..out)
            .map(|i| {
                let offset = if out == 1 { span / 2.0 } else { i as f64 * span / (out - 1) as f64 };
                let s = (origin + offset).clamp(0.0, max);
                let lo = s.floor();
                let hi = (lo + 1.0).min(max);
                (lo as usize, hi as usize, (s - lo) as f32)
            })
            .collect()
    };
    let xs = sample_axis(roi.x, roi.width, out_w, max_x);
    let ys = sample_axis(roi.y, roi.height, out_h, max_y);
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = g.get(x0, y0) * (1.0 - fx) + g.get(x1, y0) * fx;
            let bottom = g.get(x0, y1) * (1.0 - fx) + g.get(x1, y1) * fx;
            pixels.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    GrayFrame::new(out_w, out_h, pixels)
}

/// Appends black frames up to `t`, or keeps the centered `t` frames when the
/// input is longer.
pub fn pad_frames(frames: Vec<GrayFrame>, t: usize) -> Result<Vec<GrayFrame>> {
    let first = frames.first().ok_or(Error::Empty("frame list"))?;
    let (w, h) = (first.width(), first.height());
    if frames.len() >= t {
        let start = (frames.len() - t) / 2;
        return Ok(frames.into_iter().skip(start).take(t).collect());
    }
    let mut out = frames;
    let black = GrayFrame::black(w, h)?;
    out.resize(t, black);
    Ok(out)
}

/// Center-lower-third crop used when nothing has been detected yet:
/// `(w/4, 2h/3, w/2, h/4)`.
pub fn fallback_roi(width: usize, height: usize) -> Roi {
    let (w, h) = (width as f64, height as f64);
    Roi::new(w / 4.0, 2.0 * h / 3.0, w / 2.0, h / 4.0)
}

/// Largest detection whose center lies in the lower half of the frame.
pub fn best_mouth(detections: &[Roi], frame_height: usize) -> Option<Roi> {
    let half = frame_height as f64 / 2.0;
    detections
        .iter()
        .filter(|r| r.center().1 >= half)
        .fold(None, |best: Option<Roi>, r| match best {
            Some(b) if b.area() >= r.area() => Some(b),
            _ => Some(*r),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoiSource {
    Detected,
    Previous,
    Fallback,
}

/// Mouth ROI for one frame: the best detection, else `previous`, else the
/// fixed fallback crop.
pub fn extract_mouth(
    frame: &GrayFrame,
    cascade: &CascadeModel,
    params: &DetectorParams,
    previous: Option<Roi>,
) -> Result<(Roi, RoiSource)> {
    let detections = cascade_detect(frame, cascade, params)?;
    Ok(match (best_mouth(&detections, frame.height()), previous) {
        (Some(roi), _) => (roi, RoiSource::Detected),
        (None, Some(prev)) => (prev, RoiSource::Previous),
        (None, None) => (fallback_roi(frame.width(), frame.height()), RoiSource::Fallback),
    })
}

/// Per-frame detection with temporal fallback to the last ROI.
#[derive(Debug, Clone)]
pub struct MouthTracker<'a> {
    cascade: &'a CascadeModel,
    params: DetectorParams,
    previous: Option<Roi>,
}

impl<'a> MouthTracker<'a> {
    pub fn new(cascade: &'a CascadeModel, params: DetectorParams) -> Self {
        MouthTracker {
            cascade,
            params,
            previous: None,
        }
    }

    pub fn next(&mut self, frame: &GrayFrame) -> Result<(Roi, RoiSource)> {
        let (roi, source) = extract_mouth(frame, self.cascade, &self.params, self.previous)?;
        self.previous = Some(roi);
        Ok((roi, source))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Detect once (first successful frame) and reuse that ROI for the video.
    pub fixed_roi: bool,
    pub detector: DetectorParams,
}

#[derive(Debug, Clone)]
pub struct PreprocessedVideo {
    /// `[T, 1, H, W]`
    pub frames: Tensor<f32>,
    /// Mouth ROI used for every source frame that survived padding.
    pub rois: Vec<(Roi, RoiSource)>,
    pub source_len: usize,
}

/// Mouth extraction, crop to the profile aspect and size, and padding to `T`.
pub fn preprocess_video(frames: &[GrayFrame], cascade: &CascadeModel, options: &PreprocessOptions) -> Result<PreprocessedVideo> {
    if frames.is_empty() {
        return Err(Error::Empty("video"));
    }
    let rois: Vec<(Roi, RoiSource)> = if options.fixed_roi {
        let mut found = None;
        for f in frames {
            let (roi, source) = extract_mouth(f, cascade, &options.detector, None)?;
            if source == RoiSource::Detected {
                found = Some((roi, source));
                break;
            }
        }
        let fixed = found.unwrap_or_else(|| (fallback_roi(frames[0].width(), frames[0].height()), RoiSource::Fallback));
        vec![fixed; frames.len()]
    } else {
        let mut tracker = MouthTracker::new(cascade, options.detector);
        frames.iter().map(|f| tracker.next(f)).collect::<Result<_>>()?
    };
    let aspect = options.width as f64 / options.height as f64;
    let crops = frames
        .iter()
        .zip(&rois)
        .map(|(f, (roi, _))| crop_resize(f, &roi.fit_aspect(aspect, f.width(), f.height()), options.width, options.height))
        .collect::<Result<Vec<_>>>()?;
    let source_len = crops.len().min(options.frames);
    let kept_start = crops.len().saturating_sub(options.frames) / 2;
    let rois = rois.into_iter().skip(kept_start).take(options.frames).collect();
    let padded = pad_frames(crops, options.frames)?;
    Ok(PreprocessedVideo {
        frames: frames_to_tensor(&padded)?,
        rois,
        source_len,
    })
}

/// Stacks equally sized frames into `[T, 1, H, W]`.
pub fn frames_to_tensor(frames: &[GrayFrame]) -> Result<Tensor<f32>> {
    let first = frames.first().ok_or(Error::Empty("frame list"))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(frames.len() * w * h);
    for f in frames {
        if (f.width(), f.height()) != (w, h) {
            return Err(Error::ShapeMismatch {
                op: "frames_to_tensor",
                left: vec![h, w],
                right: vec![f.height(), f.width()],
            });
        }
        data.extend_from_slice(f.pixels());
    }
    Tensor::new(&[frames.len(), 1, h, w], data)
}

/// Splits a `[T, 1, H, W]` tensor into frames.
pub fn tensor_to_frames(t: &Tensor<f32>) -> Result<Vec<GrayFrame>> {
    match t.dims() {
        &[n, 1, h, w] => (0..n)
            .map(|i| GrayFrame::new(w, h, t.data()[i * h * w..(i + 1) * h * w].to_vec()))
            .collect(),
        other => Err(Error::InvalidShape(other.to_vec())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayFrame {
        GrayFrame::new(w, h, (0..w * h).map(|i| i as f32 / (w * h) as f32).collect()).unwrap()
    }

    #[test]
    fn full_frame_same_size_is_identity() {
        let g = ramp(7, 5);
        assert_eq!(crop_resize(&g, &Roi::full(&g), 7, 5).unwrap(), g);
    }

    #[test]
    fn constant_region_stays_constant() {
        let g = GrayFrame::filled(10, 10, 0.3).unwrap();
        let out = crop_resize(&g, &Roi::new(1.5, 2.25, 6.0, 4.0), 13, 9).unwrap();
        assert!(out.pixels().iter().all(|&p| (p - 0.3).abs() < 1e-6));
    }

    #[test]
    fn checkerboard_corners_survive_upscaling() {
        let g = GrayFrame::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = crop_resize(&g, &Roi::full(&g), 4, 4).unwrap();
        assert_eq!(out.get(0, 0), 1.0);
        assert_eq!(out.get(3, 0), 0.0);
        assert_eq!(out.get(0, 3), 0.0);
        assert_eq!(out.get(3, 3), 1.0);
    }

    #[test]
    fn roi_outside_frame_is_rejected() {
        let g = GrayFrame::black(10, 10).unwrap();
        assert!(matches!(
            crop_resize(&g, &Roi::new(5.0, 5.0, 6.0, 2.0), 4, 4),
            Err(Error::RoiOutOfBounds { .. })
        ));
    }

    fn numbered(n: usize) -> Vec<GrayFrame> {
        (0..n).map(|i| GrayFrame::filled(2, 2, (i + 1) as f32 / 100.0).unwrap()).collect()
    }

    #[test]
    fn short_video_gets_black_frames() {
        let out = pad_frames(numbered(20), 29).unwrap();
        assert_eq!(out.len(), 29);
        assert!(out[20..].iter().all(|f| f.pixels().iter().all(|&p| p == 0.0)));
        assert_eq!(out[19], numbered(20)[19]);
    }

    #[test]
    fn exact_length_is_unchanged() {
        assert_eq!(pad_frames(numbered(29), 29).unwrap(), numbered(29));
    }

    #[test]
    fn long_video_keeps_center() {
        let out = pad_frames(numbered(31), 29).unwrap();
        assert_eq!(out, numbered(31)[1..30].to_vec());
    }

    #[test]
    fn empty_video_is_rejected() {
        assert!(matches!(pad_frames(vec![], 5), Err(Error::Empty(_))));
    }

    #[test]
    fn black_frame_without_history_uses_fallback() {
        let g = GrayFrame::black(80, 60).unwrap();
        let (roi, source) = extract_mouth(&g, &CascadeModel::bundled(), &DetectorParams::default(), None).unwrap();
        assert_eq!(source, RoiSource::Fallback);
        assert_eq!(roi, Roi::new(20.0, 40.0, 40.0, 15.0));
    }

    #[test]
    fn lost_detection_reuses_previous() {
        let g = GrayFrame::black(80, 60).unwrap();
        let prev = Roi::new(30.0, 35.0, 24.0, 16.0);
        let (roi, source) = extract_mouth(&g, &CascadeModel::bundled(), &DetectorParams::default(), Some(prev)).unwrap();
        assert_eq!((roi, source), (prev, RoiSource::Previous));
    }

    #[test]
    fn best_mouth_ignores_upper_half() {
        let upper = Roi::new(0.0, 0.0, 40.0, 20.0);
        let lower = Roi::new(0.0, 60.0, 20.0, 10.0);
        assert_eq!(best_mouth(&[upper, lower], 80), Some(lower));
    }

    #[test]
    fn tensor_frame_round_trip() {
        let frames = numbered(3);
        let t = frames_to_tensor(&frames).unwrap();
        assert_eq!(t.dims(), &[3, 1, 2, 2]);
        assert_eq!(tensor_to_frames(&t).unwrap(), frames);
    }
}
