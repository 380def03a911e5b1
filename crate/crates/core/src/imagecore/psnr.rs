//! Peak signal-to-noise ratio over 8-bit rasters.

use super::Raster;
use crate::error::{Error, Result};

/// Reported PSNR for identical inputs, where the true value is infinite.
pub const PSNR_CAP_DB: f64 = 99.0;

/// `10·log10(255²/MSE)` over every sample of every channel.
///
/// Identical images report [`PSNR_CAP_DB`] so diversity tables stay finite.
/// Lower is more different.
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "psnr of {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let sse: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = sse as f64 / a.data().len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}
