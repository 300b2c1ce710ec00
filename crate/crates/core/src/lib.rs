//! Visual word recognition from mouth-region video.
//!
//! The pipeline crops the mouth from every frame with a rectangle-feature
//! cascade, pads each clip to a fixed number of frames, and classifies words
//! with a two-phase model: a convolutional autoencoder is trained to reconstruct
//! single frames, then its frozen encoder turns each frame into a feature vector
//! and an LSTM classifies the resulting sequence. A CNN patch classifier trained
//! on lip / non-lip crops serves as the comparison feature extractor.
//!
//! Everything numeric (convolutions, pooling, LSTM, losses and their gradients)
//! is implemented in this crate. A deterministic synthetic video generator
//! stands in for licensed corpora.

pub mod datasets;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod vision;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{Axis, DType, Scalar, Shape, Tensor};
