use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the command line to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Divergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {0:?}: rank must be >= 1 and every dim >= 1")]
    InvalidShape(Vec<usize>),

    #[error("element count mismatch: shape {shape:?} needs {expected} elements, got {actual}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("dtype mismatch: expected {expected}, found {found}")]
    DType {
        expected: &'static str,
        found: &'static str,
    },

    #[error("{op}: output size is not integral ({detail})")]
    NonIntegral { op: &'static str, detail: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFinite { epoch: usize, step: usize, value: f64 },

    #[error("corrupt magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("header/payload mismatch: {0}")]
    HeaderMismatch(String),

    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("non-invertible geometry at encoder layer {layer}: {detail}")]
    NonInvertible { layer: usize, detail: String },

    #[error("profile mismatch: expected {expected}, found {found}")]
    ProfileMismatch { expected: String, found: String },

    #[error("class `{class}` has {available} occurrences, needs {required}")]
    InsufficientOccurrences {
        class: String,
        available: usize,
        required: usize,
    },

    #[error("unknown speaker {0}")]
    UnknownSpeaker(u32),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("degenerate cascade: {0}")]
    DegenerateCascade(String),

    #[error("region {roi} lies outside a {width}x{height} frame")]
    RoiOutOfBounds {
        roi: String,
        width: usize,
        height: usize,
    },

    #[error("cannot sample a balanced patch set: {0}")]
    PatchBudget(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite { .. } => ErrorKind::Divergence,
            Error::Config(_)
            | Error::InvalidSplit(_)
            | Error::NonInvertible { .. }
            | Error::NonIntegral { .. }
            | Error::Architecture(_)
            | Error::UnknownSpeaker(_)
            | Error::DegenerateCascade(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        }
    }
}
