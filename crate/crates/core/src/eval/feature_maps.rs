use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::ModelArchitecture;
use crate::nn::conv2d_forward;
use crate::optim::ModelCheckpoint;
use crate::tensor::Tensor;
use crate::vision::{read_image, write_pgm, GrayFrame};

/// Default stddev below which a response map counts as empty.
pub const EMPTY_MAP_THRESHOLD: f64 = 1e-3;

/// One first-layer kernel's response to a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// Min-max normalized to `[0, 1]`; constant responses are all zero.
    pub image: GrayFrame,
    /// Population standard deviation of the raw response.
    pub raw_std: f64,
}

/// Responses of every kernel of `weight: [K, 1, kh, kw]` to `frame`, without bias.
pub fn kernel_feature_maps(weight: &Tensor<f32>, stride: usize, pad: usize, frame: &GrayFrame) -> Result<Vec<FeatureMap>> {
    if weight.rank() != 4 || weight.dims()[1] != 1 {
        return Err(Error::Architecture(format!(
            "first-layer kernels must be [K, 1, kh, kw], got {:?}",
            weight.dims()
        )));
    }
    let k = weight.dims()[0];
    let x = frame.to_tensor().reshape(&[1, 1, frame.height(), frame.width()])?;
    let (y, _) = conv2d_forward(&x, weight, &Tensor::zeros(&[k])?, stride, pad)?;
    let (h, w) = (y.dims()[2], y.dims()[3]);
    y.data()
        .chunks_exact(h * w)
        .map(|plane| {
            let n = plane.len() as f64;
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let pixels = if hi > lo {
                plane.iter().map(|&v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.0; plane.len()]
            };
            Ok(FeatureMap {
                image: GrayFrame::new(w, h, pixels)?,
                raw_std: var.sqrt(),
            })
        })
        .collect()
}

/// Responses of the first conv layer of an autoencoder or patch-classifier
/// checkpoint, one map per kernel.
pub fn first_layer_feature_maps(ckpt: &ModelCheckpoint, frame: &GrayFrame) -> Result<Vec<FeatureMap>> {
    let (desc, name) = match ModelArchitecture::from_json(&ckpt.architecture)? {
        ModelArchitecture::Cae { descriptor } => (descriptor, "enc.conv1.w"),
        ModelArchitecture::PatchCnn { descriptor } => (descriptor, "cnn.conv1.w"),
        ModelArchitecture::Lstm { .. } => {
            return Err(Error::Architecture("an LSTM classifier has no convolution layer".into()))
        }
    };
    let first = desc
        .conv
        .first()
        .ok_or_else(|| Error::Architecture("empty conv stack".into()))?;
    let weight = ckpt.params.get(name).map_err(|_| Error::MissingParam(name.into()))?;
    kernel_feature_maps(weight, first.stride, first.pad, frame)
}

/// Fraction of maps whose raw response has stddev below `threshold`.
pub fn emptiness_score(maps: &[FeatureMap], threshold: f64) -> f64 {
    if maps.is_empty() {
        return 0.0;
    }
    maps.iter().filter(|m| m.raw_std < threshold).count() as f64 / maps.len() as f64
}

/// 8-bit binary PGM.
pub fn emit_pgm(image: &GrayFrame, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(path, image)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayFrame> {
    read_image(path)
}

/// Writes `kernel_000.pgm`, `kernel_001.pgm`, … into `dir`.
pub fn write_feature_maps(maps: &[FeatureMap], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, m) in maps.iter().enumerate() {
        emit_pgm(&m.image, dir.join(format!("kernel_{i:03}.pgm")))?;
    }
    Ok(())
}
