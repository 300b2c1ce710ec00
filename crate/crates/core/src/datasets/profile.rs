use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed video geometry of a dataset: frame count and mouth-crop size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Profile {
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
}

impl Profile {
    pub const fn new(frames: usize, height: usize, width: usize) -> Self {
        Profile { frames, height, width }
    }

    /// Word-level broadcast corpus: 29 frames of 72×42.
    pub const fn bbc() -> Self {
        Profile::new(29, 42, 72)
    }

    /// Ten-word, fifteen-speaker corpus: 25 frames of 72×28.
    pub const fn miracl() -> Self {
        Profile::new(25, 28, 72)
    }

    /// Sentence corpus segmented into words: 25 frames of 72×28.
    pub const fn grid() -> Self {
        Profile::new(25, 28, 72)
    }

    /// Reduced geometry for fast local runs: 12 frames of 36×24.
    pub const fn desk() -> Self {
        Profile::new(12, 24, 36)
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "bbc" => Ok(Self::bbc()),
            "miracl" => Ok(Self::miracl()),
            "grid" => Ok(Self::grid()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected bbc, miracl, grid or desk)"))),
        }
    }

    /// Shape of one video tensor, `[T, 1, H, W]`.
    pub fn video_dims(&self) -> [usize; 4] {
        [self.frames, 1, self.height, self.width]
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// Size of the full synthetic scene that contains the mouth crop.
    pub fn scene_size(&self) -> (usize, usize) {
        (2 * self.width, 3 * self.height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("profile {self} has a zero dimension")));
        }
        Ok(())
    }

    /// Errors unless `dims` is exactly `[T, 1, H, W]`.
    pub fn check_video(&self, dims: &[usize]) -> Result<()> {
        if dims != self.video_dims() {
            return Err(Error::ProfileMismatch {
                expected: format!("{:?}", self.video_dims()),
                found: format!("{dims:?}"),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T={} {}x{}", self.frames, self.width, self.height)
    }
}
