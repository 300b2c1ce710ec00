//! Grayscale frames, cascade mouth detection, cropping and padding.

mod cascade;
mod frame;
mod imageio;
mod integral;
mod preprocess;

pub use cascade::{
    cascade_detect, detect_windows, merge_detections, scale_rect, scan_scales, scan_windows, window_stddev,
    CascadeModel, DetectorParams, FeatureRect, ScaledRect, ScanScale, Stage, WeakClassifier, Window,
};
pub use frame::{to_grayscale, GrayFrame, RgbFrame, Roi};
pub use imageio::{encode_pgm, is_image_file, read_frame_dir, read_image, write_frame_dir, write_pgm};
pub use integral::{integral_image, LevelIntegrals, SummedArea};
pub use preprocess::{
    best_mouth, crop_resize, extract_mouth, fallback_roi, frames_to_tensor, pad_frames, preprocess_video,
    tensor_to_frames, MouthTracker, PreprocessOptions, PreprocessedVideo, RoiSource,
};
