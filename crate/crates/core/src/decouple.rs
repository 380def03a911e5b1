//! Splitting an image into its foreground cutout (CDP) and the background
//! with a hole where the foreground was (CIP).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{alpha_area, ClassId, Mask, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CdpKind {
    Real,
    Synthetic,
}

/// Class-dependent part: an RGBA cutout cropped to its tight bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct Cdp {
    pub id: String,
    pub sprite: Raster,
    pub class_id: ClassId,
    pub kind: CdpKind,
    pub source_id: String,
    /// For synthetic CDPs, the real CDP they were edited from.
    pub parent_id: Option<String>,
    pub alpha_area: f64,
    /// Edit strength, synthetic CDPs only.
    pub strength_used: Option<f64>,
}

impl Cdp {
    pub fn real(
        id: impl Into<String>,
        sprite: Raster,
        class_id: ClassId,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let alpha_area = alpha_area(&sprite)?;
        Ok(Self {
            id: id.into(),
            sprite,
            class_id,
            kind: CdpKind::Real,
            source_id: source_id.into(),
            parent_id: None,
            alpha_area,
            strength_used: None,
        })
    }

    /// A synthetic variant of `parent` with a new sprite.
    pub fn synthetic(id: impl Into<String>, sprite: Raster, parent: &Cdp, strength: f64) -> Result<Self> {
        if parent.kind != CdpKind::Real {
            return Err(Error::Integrity(format!("synthetic CDP parent {} is itself synthetic", parent.id)));
        }
        let alpha_area = alpha_area(&sprite)?;
        Ok(Self {
            id: id.into(),
            sprite,
            class_id: parent.class_id,
            kind: CdpKind::Synthetic,
            source_id: parent.source_id.clone(),
            parent_id: Some(parent.id.clone()),
            alpha_area,
            strength_used: Some(strength),
        })
    }
}

/// Background with the foreground region marked as a hole.
#[derive(Debug, Clone, PartialEq)]
pub struct CipWithHole {
    pub pixels: Raster,
    /// 255 where content was removed, 0 elsewhere.
    pub hole: Mask,
    pub source_id: String,
    pub source_class: ClassId,
}

impl CipWithHole {
    pub fn new(pixels: Raster, hole: Mask, source_id: impl Into<String>, source_class: ClassId) -> Result<Self> {
        pixels.expect_channels(3)?;
        if !hole.matches(&pixels) {
            return Err(Error::DimensionMismatch("hole does not match CIP pixels".into()));
        }
        Ok(Self { pixels, hole: hole.binarized(), source_id: source_id.into(), source_class })
    }
}

/// Hole-free class-independent part.
#[derive(Debug, Clone, PartialEq)]
pub struct Cip {
    pub id: String,
    pub pixels: Raster,
    pub source_class: ClassId,
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Pixelwise maximum of `masks`, i.e. their union under binarization.
pub fn aggregate_masks(masks: &[Mask]) -> Result<Mask> {
    let (first, rest) = masks.split_first().ok_or_else(|| Error::InvalidInput("no masks to aggregate".into()))?;
    let mut out = first.clone();
    for m in rest {
        if m.width() != out.width() || m.height() != out.height() {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs {}x{}",
                m.width(),
                m.height(),
                out.width(),
                out.height()
            )));
        }
        for (o, &v) in out.data_mut().iter_mut().zip(m.data()) {
            *o = (*o).max(v);
        }
    }
    Ok(out)
}

/// Tight bounding box of the binarized mask.
pub fn foreground_bbox(mask: &Mask) -> Option<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.is_set(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != u32::MAX).then(|| BBox { x: x0, y: y0, width: x1 - x0 + 1, height: y1 - y0 + 1 })
}

fn check_inputs(image: &Raster, mask: &Mask) -> Result<BBox> {
    image.expect_channels(3)?;
    if !mask.matches(image) {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    let set = mask.count_set();
    if set == 0 {
        return Err(Error::NoForeground);
    }
    if set == image.pixel_count() {
        return Err(Error::NoBackground);
    }
    Ok(foreground_bbox(mask).expect("mask has set pixels"))
}

/// Cut the masked foreground out of `image`.
///
/// The soft mask values become the alpha channel; binarization is only used
/// to find the crop rectangle. Returns the CDP and the top-left corner of the
/// crop in image coordinates.
pub fn extract_cdp(image: &Raster, mask: &Mask, class_id: ClassId, source_id: &str) -> Result<(Cdp, BBox)> {
    let bbox = check_inputs(image, mask)?;
    let rgba = image.with_alpha(mask)?;
    let sprite = rgba.crop(bbox.x, bbox.y, bbox.width, bbox.height)?;
    let cdp = Cdp::real(format!("cdp-{source_id}"), sprite, class_id, source_id)?;
    Ok((cdp, bbox))
}

/// The image with its binarized foreground recorded as a hole.
pub fn extract_cip(image: &Raster, mask: &Mask, class_id: ClassId, source_id: &str) -> Result<CipWithHole> {
    check_inputs(image, mask)?;
    CipWithHole::new(image.clone(), mask.binarized(), source_id, class_id)
}
