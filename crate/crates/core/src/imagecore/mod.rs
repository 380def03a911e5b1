//! Raster primitives shared by every stage of the pipeline.
//!
//! Images are stored as 8-bit interleaved samples in row-major order. All
//! arithmetic that mixes samples is done in `f64` and rounded half-up back to
//! 8 bits exactly once, so results are bit-reproducible across platforms.

mod composite;
mod io;
mod psnr;
mod resize;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use composite::{alpha_area, composite_over, paste_over, transform_sprite, transformed_size};
pub use io::{
    decode_mask_png, decode_png, encode_mask_png, encode_png, load_mask, load_raster, load_rgb, load_rgba, save_mask,
    save_raster,
};
pub use psnr::{psnr, PSNR_CAP_DB};
pub use resize::resize_bilinear;

/// Binarization threshold for masks and alpha channels.
pub const MASK_THRESHOLD: u8 = 128;

/// Dense class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Round to the nearest integer with ties going up, then clamp to `u8`.
#[inline]
pub fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// An 8-bit RGB or RGBA image.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: usize,
    data: Vec<u8>,
}

impl fmt::Debug for Raster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimension { width, height });
        }
        if channels != 3 && channels != 4 {
            return Err(Error::InvalidInput(format!("rasters carry 3 or 4 channels, got {channels}")));
        }
        let expected = width as usize * height as usize * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height}x{channels} raster needs {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    /// A raster with every pixel set to `pixel` (whose length picks the channel count).
    pub fn filled(width: u32, height: u32, pixel: &[u8]) -> Result<Self> {
        let n = width as usize * height as usize;
        let data = pixel.iter().copied().cycle().take(n * pixel.len()).collect();
        Self::new(width, height, pixel.len(), data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_rgba(&self) -> bool {
        self.channels == 4
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let o = self.offset(x, y);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn expect_channels(&self, expected: usize) -> Result<()> {
        if self.channels == expected {
            Ok(())
        } else {
            Err(Error::ChannelMismatch { expected, actual: self.channels })
        }
    }

    /// The alpha channel as a mask. Fails for RGB rasters.
    pub fn alpha_mask(&self) -> Result<Mask> {
        self.expect_channels(4)?;
        let data = self.data.chunks_exact(4).map(|p| p[3]).collect();
        Mask::new(self.width, self.height, data)
    }

    /// Drop the alpha channel (no blending against any background).
    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
        Raster { width: self.width, height: self.height, channels: 3, data }
    }

    /// Attach `alpha` as a fourth channel to an RGB raster.
    pub fn with_alpha(&self, alpha: &Mask) -> Result<Raster> {
        self.expect_channels(3)?;
        if alpha.width() != self.width || alpha.height() != self.height {
            return Err(Error::DimensionMismatch(format!(
                "alpha {}x{} vs raster {}x{}",
                alpha.width(),
                alpha.height(),
                self.width,
                self.height
            )));
        }
        let data = self.data.chunks_exact(3).zip(alpha.data()).flat_map(|(p, &a)| [p[0], p[1], p[2], a]).collect();
        Raster::new(self.width, self.height, 4, data)
    }

    /// Copy of the `w`x`h` region whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Result<Raster> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::DimensionMismatch(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(w as usize * h as usize * c);
        for y in y0..y0 + h {
            let start = self.offset(x0, y);
            data.extend_from_slice(&self.data[start..start + w as usize * c]);
        }
        Raster::new(w, h, c, data)
    }

    pub fn flip_horizontal(&self) -> Raster {
        let c = self.channels;
        let w = self.width as usize;
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(w * c) {
            for px in row.chunks_exact(c).rev() {
                data.extend_from_slice(px);
            }
        }
        Raster { data, ..*self }
    }
}

/// Single-channel 8-bit mask. Values ≥ [`MASK_THRESHOLD`] count as set.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("set", &self.count_set())
            .finish()
    }
}

impl Mask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimension { width, height });
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} mask needs {} samples, got {}",
                width as usize * height as usize,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    #[inline]
    pub fn is_set(&self, x: u32, y: u32) -> bool {
        self.get(x, y) >= MASK_THRESHOLD
    }

    /// Hard 0/255 version of this mask.
    pub fn binarized(&self) -> Mask {
        let data = self.data.iter().map(|&v| if v >= MASK_THRESHOLD { 255 } else { 0 }).collect();
        Mask { data, ..*self }
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v >= MASK_THRESHOLD).count()
    }

    /// Fraction of pixels that are set.
    pub fn coverage(&self) -> f64 {
        self.count_set() as f64 / self.data.len() as f64
    }

    pub fn matches(&self, r: &Raster) -> bool {
        self.width == r.width() && self.height == r.height()
    }
}

/// Soft label: class → weight, weights summing to one.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelVector(BTreeMap<ClassId, f64>);

impl LabelVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn one_hot(class: ClassId) -> Self {
        Self(BTreeMap::from([(class, 1.0)]))
    }

    /// Weights proportional to `masses`; zero-mass entries are dropped.
    pub fn from_masses(masses: &[(ClassId, f64)]) -> Result<Self> {
        let total: f64 = masses.iter().map(|(_, m)| *m).sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::InvalidInput(format!("label masses sum to {total}")));
        }
        let mut map = BTreeMap::new();
        for &(c, m) in masses {
            if m < 0.0 {
                return Err(Error::InvalidInput(format!("negative label mass {m}")));
            }
            if m > 0.0 {
                *map.entry(c).or_insert(0.0) += m / total;
            }
        }
        Ok(Self(map))
    }

    /// `lambda`·onehot(a) + (1−`lambda`)·onehot(b).
    pub fn interpolate(a: ClassId, b: ClassId, lambda: f64) -> Self {
        let mut map = BTreeMap::new();
        if lambda > 0.0 {
            *map.entry(a).or_insert(0.0) += lambda;
        }
        if lambda < 1.0 {
            *map.entry(b).or_insert(0.0) += 1.0 - lambda;
        }
        Self(map)
    }

    pub fn weight(&self, class: ClassId) -> f64 {
        self.0.get(&class).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, f64)> + '_ {
        self.0.iter().map(|(c, w)| (*c, *w))
    }

    pub fn sum(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        self.0.values().all(|w| (0.0..=1.0).contains(w)) && (self.sum() - 1.0).abs() <= Self::SUM_TOLERANCE
    }

    /// Dense vector over `num_classes` classes.
    pub fn to_dense(&self, num_classes: usize) -> Vec<f64> {
        let mut v = vec![0.0; num_classes];
        for (c, w) in self.iter() {
            if let Some(slot) = v.get_mut(c.0 as usize) {
                *slot += w;
            }
        }
        v
    }
}

/// How a sprite is transformed and where it lands on the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub scale: f64,
    pub flip_h: bool,
    /// Top-left corner of the transformed sprite; may be negative.
    pub offset_x: i64,
    pub offset_y: i64,
}

impl Placement {
    pub fn at(offset_x: i64, offset_y: i64) -> Self {
        Self { scale: 1.0, flip_h: false, offset_x, offset_y }
    }
}
