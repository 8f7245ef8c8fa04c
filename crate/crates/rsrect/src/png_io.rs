//! 8-bit PNG load/save.
//!
//! Intensity 0 is reserved for "outside the image": loading maps a stored
//! byte `v` to `max(v, 1) / 255`, so every loaded pixel is strictly
//! positive and survives the all-channels-zero visibility test. Saving
//! clamps to `[0, 1]` and quantizes round-half-up.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};
use rsrect_core::{Image, Real, VisibilityMask};

use crate::error::{Error, Result};

/// Loads an 8-bit (or palette / 16-bit, reduced to 8-bit) PNG as a gray or
/// RGB image. Alpha is dropped.
pub fn load_png<T: Real>(path: &Path) -> Result<Image<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND | Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e))?;
    if info.bit_depth != BitDepth::Eight {
        return Err(Error::format(path, "only 8-bit samples are supported"));
    }
    let (stride, keep) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => return Err(Error::format(path, "unexpanded palette image")),
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let mut data = Vec::with_capacity(h * w * keep);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row.chunks(stride).take(w) {
            data.extend(
                px[..keep]
                    .iter()
                    .map(|&v| T::of(f64::from(v.max(1)) / 255.0)),
            );
        }
    }
    Ok(Image::new(h, w, keep, data)?)
}

/// Byte a stored intensity quantizes to.
#[inline]
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

/// Saves a 1- or 3-channel image as an 8-bit PNG.
pub fn save_png<T: Real>(path: &Path, img: &Image<T>) -> Result<()> {
    let color = match img.channels() {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        c => {
            return Err(Error::format(
                path,
                format!("cannot save a {c}-channel image as PNG"),
            ))
        }
    };
    let bytes: Vec<u8> = img.data().iter().map(|v| quantize(v.as_f64())).collect();
    write_png(path, img.height(), img.width(), color, &bytes)
}

/// Saves a mask as a gray PNG (255 visible, 0 invalid).
pub fn save_mask_png(path: &Path, mask: &VisibilityMask) -> Result<()> {
    let bytes: Vec<u8> = mask
        .data()
        .iter()
        .map(|&m| if m { 255 } else { 0 })
        .collect();
    write_png(
        path,
        mask.height(),
        mask.width(),
        ColorType::Grayscale,
        &bytes,
    )
}

/// Loads a mask saved by [`save_mask_png`]: any nonzero byte is visible.
pub fn load_mask_png(path: &Path) -> Result<VisibilityMask> {
    let img = load_png::<f64>(path)?;
    if img.channels() != 1 {
        return Err(Error::format(path, "mask must be a gray image"));
    }
    // loading maps 0 to 1/255, so "set" means strictly above that
    let data = img.data().iter().map(|&v| v > 1.5 / 255.0).collect();
    Ok(VisibilityMask::new(img.height(), img.width(), data)?)
}

fn write_png(
    path: &Path,
    height: usize,
    width: usize,
    color: ColorType,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::format(path, e))?;
    writer.finish().map_err(|e| Error::format(path, e))
}
