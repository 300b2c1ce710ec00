use serde::{Deserialize, Serialize};

use crate::datasets::Profile;
use crate::error::{Error, Result};
use crate::nn::conv::conv_out_len;
use crate::nn::{xavier_init, Layer, ParamSet};

/// One convolution of the per-frame stack, optionally followed by 2×2 max pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub pool: bool,
}

impl ConvLayerSpec {
    /// 3×3, stride 1, same padding.
    pub const fn same3(out_channels: usize, pool: bool) -> Self {
        ConvLayerSpec {
            out_channels,
            kernel: 3,
            stride: 1,
            pad: 1,
            pool,
        }
    }
}

/// Geometry of every network in the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub conv: Vec<ConvLayerSpec>,
    pub feature_dim: usize,
    pub lstm_hidden: usize,
    #[serde(default = "one")]
    pub lstm_layers: usize,
    pub vocab_size: usize,
    pub profile: Profile,
}

fn one() -> usize {
    1
}

/// Pooling window and stride.
pub const POOL: usize = 2;

impl ArchitectureDescriptor {
    /// Five 3×3 layers with 64…192 kernels, a 100-unit feature layer and a
    /// 512-unit LSTM. The first three layers pool where the current map has
    /// even height and width; other layers never pool.
    pub fn paper(profile: Profile, vocab_size: usize) -> Self {
        let mut conv = Vec::new();
        let (mut h, mut w) = (profile.height, profile.width);
        for (i, &c) in [64, 96, 128, 160, 192].iter().enumerate() {
            let pool = i < 3 && h % POOL == 0 && w % POOL == 0 && h >= POOL && w >= POOL;
            if pool {
                h /= POOL;
                w /= POOL;
            }
            conv.push(ConvLayerSpec::same3(c, pool));
        }
        ArchitectureDescriptor {
            conv,
            feature_dim: 100,
            lstm_hidden: 512,
            lstm_layers: 1,
            vocab_size,
            profile,
        }
    }

    /// Two pooled 3×3 layers with 8 and 16 kernels, 32 features, 64 LSTM units.
    pub fn desk(profile: Profile, vocab_size: usize) -> Self {
        ArchitectureDescriptor {
            conv: vec![ConvLayerSpec::same3(8, true), ConvLayerSpec::same3(16, true)],
            feature_dim: 32,
            lstm_hidden: 64,
            lstm_layers: 1,
            vocab_size,
            profile,
        }
    }

    /// Two pooled layers with 4 and 8 kernels, for tests.
    pub fn tiny(profile: Profile, vocab_size: usize) -> Self {
        ArchitectureDescriptor {
            conv: vec![ConvLayerSpec::same3(4, true), ConvLayerSpec::same3(8, true)],
            feature_dim: 16,
            lstm_hidden: 16,
            lstm_layers: 1,
            vocab_size,
            profile,
        }
    }

    /// `paper`, `desk` or `tiny`.
    pub fn preset(name: &str, profile: Profile, vocab_size: usize) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(profile, vocab_size)),
            "desk" => Ok(Self::desk(profile, vocab_size)),
            "tiny" => Ok(Self::tiny(profile, vocab_size)),
            other => Err(Error::Config(format!("unknown architecture preset `{other}`"))),
        }
    }

    /// Per-frame input `[1, H, W]`.
    pub fn frame_dims(&self) -> [usize; 3] {
        [1, self.profile.height, self.profile.width]
    }

    /// `[C, H, W]` after each conv layer (after its pooling, if any).
    pub fn layer_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let [_, mut h, mut w] = self.frame_dims();
        let mut shapes = Vec::with_capacity(self.conv.len());
        for (i, layer) in self.conv.iter().enumerate() {
            let at_layer = |e: Error| match e {
                Error::NonIntegral { op, detail } => Error::NonIntegral {
                    op,
                    detail: format!("conv layer {}: {detail}", i + 1),
                },
                other => other,
            };
            h = conv_out_len("conv2d", h, layer.kernel, layer.stride, layer.pad).map_err(at_layer)?;
            w = conv_out_len("conv2d", w, layer.kernel, layer.stride, layer.pad).map_err(at_layer)?;
            if layer.pool {
                h = conv_out_len("maxpool", h, POOL, POOL, 0).map_err(at_layer)?;
                w = conv_out_len("maxpool", w, POOL, POOL, 0).map_err(at_layer)?;
            }
            shapes.push([layer.out_channels, h, w]);
        }
        Ok(shapes)
    }

    /// Length of the flattened conv output.
    pub fn flat_dim(&self) -> Result<usize> {
        let last = *self
            .layer_shapes()?
            .last()
            .ok_or_else(|| Error::Architecture("empty conv stack".into()))?;
        Ok(last.iter().product())
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if self.conv.is_empty() {
            return Err(Error::Architecture("empty conv stack".into()));
        }
        if let Some(i) = self
            .conv
            .iter()
            .position(|l| l.out_channels == 0 || l.kernel == 0 || l.stride == 0)
        {
            return Err(Error::Architecture(format!(
                "conv layer {} has a zero channel count, kernel or stride",
                i + 1
            )));
        }
        if self.feature_dim == 0 || self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return Err(Error::Architecture(
                "feature_dim, lstm_hidden and lstm_layers must be at least 1".into(),
            ));
        }
        self.layer_shapes().map(|_| ())
    }

    /// Conv stack, flatten and the feature layer, with parameters `<prefix>.conv<i>`
    /// and `<prefix>.fc`. `fc_relu` appends a ReLU after the feature layer.
    pub(crate) fn feature_layers(&self, prefix: &str, fc_relu: bool) -> Result<Vec<Layer>> {
        let mut layers = Vec::new();
        for (i, spec) in self.conv.iter().enumerate() {
            layers.push(Layer::Conv2d {
                name: format!("{prefix}.conv{}", i + 1),
                stride: spec.stride,
                pad: spec.pad,
            });
            layers.push(Layer::Relu);
            if spec.pool {
                layers.push(Layer::MaxPool {
                    window: POOL,
                    stride: POOL,
                });
            }
        }
        layers.push(Layer::Reshape {
            dims: vec![self.flat_dim()?],
        });
        layers.push(Layer::Dense {
            name: format!("{prefix}.fc"),
        });
        if fc_relu {
            layers.push(Layer::Relu);
        }
        Ok(layers)
    }

    /// Shapes of the parameters read by [`Self::feature_layers`].
    pub(crate) fn feature_params(&self, prefix: &str) -> Result<Vec<ParamShape>> {
        let mut out = Vec::new();
        let mut in_ch = 1;
        for (i, spec) in self.conv.iter().enumerate() {
            out.push(ParamShape::conv(
                format!("{prefix}.conv{}", i + 1),
                spec.out_channels,
                in_ch,
                spec.kernel,
            ));
            in_ch = spec.out_channels;
        }
        out.push(ParamShape::dense(format!("{prefix}.fc"), self.flat_dim()?, self.feature_dim));
        Ok(out)
    }
}

/// A layer's weight shape and Xavier fans; the bias is `[bias_len]` zeros.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ParamShape {
    pub name: String,
    pub weight: Vec<usize>,
    pub bias_len: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl ParamShape {
    /// Convolution weight `[out, in, k, k]`.
    pub fn conv(name: String, out_ch: usize, in_ch: usize, kernel: usize) -> Self {
        ParamShape {
            name,
            weight: vec![out_ch, in_ch, kernel, kernel],
            bias_len: out_ch,
            fan_in: in_ch * kernel * kernel,
            fan_out: out_ch * kernel * kernel,
        }
    }

    /// Transposed convolution weight `[in, out, k, k]`.
    pub fn conv_transpose(name: String, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        ParamShape {
            name,
            weight: vec![in_ch, out_ch, kernel, kernel],
            bias_len: out_ch,
            fan_in: in_ch * kernel * kernel,
            fan_out: out_ch * kernel * kernel,
        }
    }

    /// Dense weight `[in, out]`.
    pub fn dense(name: String, d_in: usize, d_out: usize) -> Self {
        ParamShape {
            name,
            weight: vec![d_in, d_out],
            bias_len: d_out,
            fan_in: d_in,
            fan_out: d_out,
        }
    }
}

/// FNV-1a, used to give every parameter its own init stream.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Xavier-uniform weights and zero biases. Each tensor's stream depends only
/// on `seed` and its name.
pub(crate) fn init_params(shapes: &[ParamShape], seed: u64) -> Result<ParamSet<f32>> {
    let mut params = ParamSet::new();
    for s in shapes {
        let w = xavier_init(
            s.fan_in,
            s.fan_out,
            &s.weight,
            crate::nn::mix_seed(seed, name_hash(&s.name)),
        )?;
        params.insert(format!("{}.w", s.name), w);
        params.insert(format!("{}.b", s.name), crate::tensor::Tensor::zeros(&[s.bias_len])?);
    }
    Ok(params)
}
