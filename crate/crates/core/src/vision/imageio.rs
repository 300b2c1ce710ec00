use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vision::{to_grayscale, GrayFrame, RgbFrame};

/// Binary 8-bit PGM (`P5`) with levels `round(p·255)`.
pub fn encode_pgm(frame: &GrayFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame.to_levels());
    out
}

pub fn write_pgm(path: impl AsRef<Path>, frame: &GrayFrame) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(frame)).map_err(|e| Error::io(path, e))
}

/// Decodes PNG, JPEG or PNM. Color images go through BT.601 luma.
pub fn read_image(path: impl AsRef<Path>) -> Result<GrayFrame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        Ok(to_grayscale(&RgbFrame::from_bytes(w, h, rgb.as_raw())?))
    } else {
        GrayFrame::from_levels(w, h, img.to_luma8().as_raw())
    }
}

/// File extensions accepted as frame images.
pub fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg" | "pgm" | "ppm" | "pnm")
    )
}

/// Every image in `dir`, in file-name order.
pub fn read_frame_dir(dir: impl AsRef<Path>) -> Result<Vec<GrayFrame>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty("frame directory"));
    }
    paths.iter().map(read_image).collect()
}

/// Writes `frame_000.pgm`, `frame_001.pgm`, … into `dir`.
pub fn write_frame_dir(dir: impl AsRef<Path>, frames: &[GrayFrame]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        write_pgm(dir.join(format!("frame_{i:03}.pgm")), f)?;
    }
    Ok(())
}
