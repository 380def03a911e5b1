//! Pixel-level Mixup and CutMix baselines.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::decouple::BBox;
use crate::error::{Error, Result};
use crate::imagecore::{round_half_up, ClassId, LabelVector, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub image: Raster,
    pub label: LabelVector,
    pub lambda: f64,
}

/// Distribution of the CutMix mixing ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LambdaSampler {
    #[default]
    Uniform,
    Beta {
        alpha: f64,
    },
}

impl LambdaSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            LambdaSampler::Uniform => Ok(rng.random::<f64>()),
            LambdaSampler::Beta { alpha } => {
                let beta =
                    Beta::new(alpha, alpha).map_err(|e| Error::InvalidInput(format!("beta({alpha}, {alpha}): {e}")))?;
                Ok(beta.sample(rng))
            }
        }
    }
}

fn check_pair(a: &Raster, b: &Raster) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// `λ·a + (1−λ)·b` per sample, rounded half-up.
pub fn mixup(a: (&Raster, ClassId), b: (&Raster, ClassId), lambda: f64) -> Result<MixResult> {
    check_pair(a.0, b.0)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let data =
        a.0.data()
            .iter()
            .zip(b.0.data())
            .map(|(&x, &y)| round_half_up(lambda * x as f64 + (1.0 - lambda) * y as f64))
            .collect();
    let image = Raster::new(a.0.width(), a.0.height(), a.0.channels(), data)?;
    Ok(MixResult { image, label: LabelVector::interpolate(a.1, b.1, lambda), lambda })
}

/// Paste `rect` of `b` into `a`; λ is the share of `a` left showing.
pub fn cutmix_with_box(a: (&Raster, ClassId), b: (&Raster, ClassId), rect: BBox) -> Result<MixResult> {
    check_pair(a.0, b.0)?;
    let (w, h) = (a.0.width(), a.0.height());
    if rect.x.saturating_add(rect.width) > w || rect.y.saturating_add(rect.height) > h {
        return Err(Error::InvalidInput(format!("cut box {rect:?} exceeds {w}x{h} image")));
    }
    let mut image = a.0.clone();
    for y in rect.y..rect.y + rect.height {
        for x in rect.x..rect.x + rect.width {
            image.pixel_mut(x, y).copy_from_slice(b.0.pixel(x, y));
        }
    }
    let patch = rect.width as f64 * rect.height as f64;
    let lambda = 1.0 - patch / (w as f64 * h as f64);
    Ok(MixResult { image, label: LabelVector::interpolate(a.1, b.1, lambda), lambda })
}

/// Cut box for target ratio `lambda`: sides `√(1−λ)` of the image's,
/// centered uniformly at random and clipped to the image.
pub fn cutmix_box<R: Rng>(width: u32, height: u32, lambda: f64, rng: &mut R) -> BBox {
    let r = (1.0 - lambda).sqrt();
    let cut_w = r * width as f64;
    let cut_h = r * height as f64;
    let cx = rng.random_range(0..width) as f64;
    let cy = rng.random_range(0..height) as f64;
    let clip = |v: f64, max: u32| v.round().clamp(0.0, max as f64) as u32;
    let x0 = clip(cx - cut_w / 2.0, width);
    let x1 = clip(cx + cut_w / 2.0, width);
    let y0 = clip(cy - cut_h / 2.0, height);
    let y1 = clip(cy + cut_h / 2.0, height);
    BBox { x: x0, y: y0, width: x1 - x0, height: y1 - y0 }
}

/// CutMix with λ drawn from `sampler`; the returned λ is the realized,
/// clipped area ratio.
pub fn cutmix<R: Rng>(
    a: (&Raster, ClassId),
    b: (&Raster, ClassId),
    sampler: LambdaSampler,
    rng: &mut R,
) -> Result<MixResult> {
    check_pair(a.0, b.0)?;
    let lambda = sampler.sample(rng)?;
    let rect = cutmix_box(a.0.width(), a.0.height(), lambda, rng);
    cutmix_with_box(a, b, rect)
}
