use super::{resize_bilinear, Placement, Raster};
use crate::error::{Error, Result};

/// Alpha-weighted pixel area: Σ alpha/255.
pub fn alpha_area(sprite: &Raster) -> Result<f64> {
    sprite.expect_channels(4)?;
    let total: u64 = sprite.data().chunks_exact(4).map(|p| p[3] as u64).sum();
    Ok(total as f64 / 255.0)
}

/// Pixel size of a `width`x`height` sprite after scaling by `scale`.
pub fn transformed_size(width: u32, height: u32, scale: f64) -> (u32, u32) {
    let w = round_half_up_u32(width as f64 * scale).max(1);
    let h = round_half_up_u32(height as f64 * scale).max(1);
    (w, h)
}

fn round_half_up_u32(v: f64) -> u32 {
    (v + 0.5).floor().max(0.0) as u32
}

/// Apply the scale and flip of `placement` to a sprite.
pub fn transform_sprite(sprite: &Raster, scale: f64, flip_h: bool) -> Result<Raster> {
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::Placement(format!("scale must be positive, got {scale}")));
    }
    let (w, h) = transformed_size(sprite.width(), sprite.height(), scale);
    let resized =
        if (w, h) == (sprite.width(), sprite.height()) { sprite.clone() } else { resize_bilinear(sprite, w, h)? };
    Ok(if flip_h { resized.flip_horizontal() } else { resized })
}

/// Source-over blend an already transformed RGBA `sprite` onto `base` in
/// place, top-left at `(offset_x, offset_y)`. Returns the in-bounds alpha area.
pub fn paste_over(base: &mut Raster, sprite: &Raster, offset_x: i64, offset_y: i64) -> Result<f64> {
    base.expect_channels(3)?;
    sprite.expect_channels(4)?;
    let (bw, bh) = (base.width() as i64, base.height() as i64);
    let x0 = offset_x.max(0);
    let y0 = offset_y.max(0);
    let x1 = (offset_x + sprite.width() as i64).min(bw);
    let y1 = (offset_y + sprite.height() as i64).min(bh);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::Placement(format!(
            "{}x{} sprite at ({offset_x}, {offset_y}) does not overlap {bw}x{bh} base",
            sprite.width(),
            sprite.height()
        )));
    }
    let mut alpha_sum: u64 = 0;
    for y in y0..y1 {
        for x in x0..x1 {
            let s = sprite.pixel((x - offset_x) as u32, (y - offset_y) as u32);
            let a = s[3] as u32;
            alpha_sum += a as u64;
            if a == 0 {
                continue;
            }
            let b = base.pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                // round-half-up of (a·s + (255−a)·b)/255, in exact integer form
                let num = a * s[c] as u32 + (255 - a) * b[c] as u32;
                b[c] = ((2 * num + 255) / 510) as u8;
            }
        }
    }
    Ok(alpha_sum as f64 / 255.0)
}

/// Composite `sprite` (RGBA) over `base` (RGB) using `placement`.
///
/// The sprite is scaled with [`resize_bilinear`], optionally mirrored, and
/// blended with `out = (a·s + (255−a)·b)/255` rounded half-up. The returned
/// area counts only sprite pixels that land inside the base.
pub fn composite_over(base: &Raster, sprite: &Raster, placement: &Placement) -> Result<(Raster, f64)> {
    base.expect_channels(3)?;
    sprite.expect_channels(4)?;
    let transformed = transform_sprite(sprite, placement.scale, placement.flip_h)?;
    let mut out = base.clone();
    let area = paste_over(&mut out, &transformed, placement.offset_x, placement.offset_y)?;
    Ok((out, area))
}
