//! PNG encode/decode at the raster boundary.

use std::io::Cursor;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageBuffer, ImageFormat, Rgb, Rgba};

use super::{Mask, Raster};
use crate::error::{Error, Result};

fn from_dynamic(img: DynamicImage) -> Result<Raster> {
    if img.color().has_alpha() {
        let buf = img.into_rgba8();
        Raster::new(buf.width(), buf.height(), 4, buf.into_raw())
    } else {
        let buf = img.into_rgb8();
        Raster::new(buf.width(), buf.height(), 3, buf.into_raw())
    }
}

fn color_type(r: &Raster) -> ColorType {
    if r.is_rgba() {
        ColorType::Rgba8
    } else {
        ColorType::Rgb8
    }
}

/// Encode as PNG bytes, RGBA when the raster has alpha.
pub fn encode_png(r: &Raster) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    image::write_buffer_with_format(&mut out, r.data(), r.width(), r.height(), color_type(r), ImageFormat::Png)
        .map_err(Error::ImageData)?;
    Ok(out.into_inner())
}

pub fn encode_mask_png(m: &Mask) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    image::write_buffer_with_format(&mut out, m.data(), m.width(), m.height(), ColorType::L8, ImageFormat::Png)
        .map_err(Error::ImageData)?;
    Ok(out.into_inner())
}

/// Decode PNG bytes, keeping alpha when present.
pub fn decode_png(bytes: &[u8]) -> Result<Raster> {
    from_dynamic(image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(Error::ImageData)?)
}

/// Decode PNG bytes as a single-channel mask.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask> {
    let buf = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(Error::ImageData)?.into_luma8();
    Mask::new(buf.width(), buf.height(), buf.into_raw())
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Load a PNG keeping its alpha channel when it has one.
pub fn load_raster(path: &Path) -> Result<Raster> {
    from_dynamic(open(path)?)
}

pub fn load_rgb(path: &Path) -> Result<Raster> {
    let buf = open(path)?.into_rgb8();
    Raster::new(buf.width(), buf.height(), 3, buf.into_raw())
}

pub fn load_rgba(path: &Path) -> Result<Raster> {
    let buf = open(path)?.into_rgba8();
    Raster::new(buf.width(), buf.height(), 4, buf.into_raw())
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let buf = open(path)?.into_luma8();
    Mask::new(buf.width(), buf.height(), buf.into_raw())
}

pub fn save_raster(r: &Raster, path: &Path) -> Result<()> {
    let res = if r.is_rgba() {
        ImageBuffer::<Rgba<u8>, _>::from_raw(r.width(), r.height(), r.data()).expect("raster invariant").save(path)
    } else {
        ImageBuffer::<Rgb<u8>, _>::from_raw(r.width(), r.height(), r.data()).expect("raster invariant").save(path)
    };
    res.map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn save_mask(m: &Mask, path: &Path) -> Result<()> {
    image::save_buffer(path, m.data(), m.width(), m.height(), ColorType::L8)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}
