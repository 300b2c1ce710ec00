use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-channel image with row-major pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayFrame {
    /// Builds a frame, clamping every pixel into `[0, 1]`. NaN becomes 0.
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidShape(vec![height, width]));
        }
        if pixels.len() != width * height {
            return Err(Error::ElementCount {
                shape: vec![height, width],
                expected: width * height,
                actual: pixels.len(),
            });
        }
        let pixels = pixels
            .into_iter()
            .map(|p| if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) })
            .collect();
        Ok(GrayFrame { width, height, pixels })
    }

    pub fn black(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// 8-bit quantization `round(p·255)`.
    pub fn to_levels(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| (p * 255.0).round() as u8).collect()
    }

    pub fn from_levels(width: usize, height: usize, levels: &[u8]) -> Result<Self> {
        Self::new(width, height, levels.iter().map(|&v| v as f32 / 255.0).collect())
    }

    /// `[1, H, W]` tensor view of the pixels.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[1, self.height, self.width], self.pixels.clone()).expect("frame dims are valid")
    }

    /// Accepts `[H, W]` or `[1, H, W]` tensors; values are clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        match t.dims() {
            [h, w] | [1, h, w] => Self::new(*w, *h, t.data().to_vec()),
            other => Err(Error::InvalidShape(other.to_vec())),
        }
    }
}

/// Three-channel image stored as interleaved RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbFrame {
    /// Channels in `[0, 1]`.
    pub fn from_unit(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ElementCount {
                shape: vec![height, width, 3],
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        Ok(RgbFrame { width, height, data })
    }

    /// Channels in `[0, 255]`.
    pub fn from_bytes(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        Self::from_unit(width, height, data.iter().map(|&v| v as f32 / 255.0).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// BT.601 luma, `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(rgb: &RgbFrame) -> GrayFrame {
    let pixels = rgb
        .data
        .chunks_exact(3)
        .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
        .collect();
    GrayFrame::new(rgb.width, rgb.height, pixels).expect("rgb frame dims are valid")
}

/// Axis-aligned rectangle in source-pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Roi {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Roi { x, y, width, height }
    }

    pub fn full(frame: &GrayFrame) -> Self {
        Roi::new(0.0, 0.0, frame.width as f64, frame.height as f64)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn intersection(&self, other: &Roi) -> f64 {
        let w = (self.x + self.width).min(other.x + other.width) - self.x.max(other.x);
        let h = (self.y + self.height).min(other.y + other.height) - self.y.max(other.y);
        w.max(0.0) * h.max(0.0)
    }

    pub fn iou(&self, other: &Roi) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.width && py >= self.y && py <= self.y + self.height
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        const SLACK: f64 = 1e-9;
        self.width > 0.0
            && self.height > 0.0
            && self.x >= -SLACK
            && self.y >= -SLACK
            && self.x + self.width <= width as f64 + SLACK
            && self.y + self.height <= height as f64 + SLACK
    }

    /// Same center and width, height set to `width / aspect`, then shrunk and
    /// shifted as needed to lie inside a `frame_w × frame_h` frame.
    pub fn fit_aspect(&self, aspect: f64, frame_w: usize, frame_h: usize) -> Roi {
        let (cx, cy) = self.center();
        let (fw, fh) = (frame_w as f64, frame_h as f64);
        let mut w = self.width;
        let mut h = w / aspect;
        if w > fw {
            w = fw;
            h = w / aspect;
        }
        if h > fh {
            h = fh;
            w = h * aspect;
        }
        let x = (cx - w / 2.0).clamp(0.0, fw - w);
        let y = (cy - h / 2.0).clamp(0.0, fh - h);
        Roi::new(x, y, w, h)
    }
}
