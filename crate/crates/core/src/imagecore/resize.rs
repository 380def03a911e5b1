use super::{round_half_up, Raster};
use crate::error::{Error, Result};

/// Source coordinate for destination index `i` under align-corners sampling.
#[inline]
fn source_coord(i: u32, src: u32, dst: u32) -> f64 {
    if dst == 1 || src == 1 {
        0.0
    } else {
        i as f64 * (src - 1) as f64 / (dst - 1) as f64
    }
}

/// Bilinear resize with align-corners sampling: the first and last
/// destination samples sit exactly on the first and last source samples.
/// Every channel, alpha included, is interpolated independently.
pub fn resize_bilinear(img: &Raster, new_w: u32, new_h: u32) -> Result<Raster> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::InvalidDimension { width: new_w, height: new_h });
    }
    let (w, h, c) = (img.width(), img.height(), img.channels());
    if (new_w, new_h) == (w, h) {
        return Ok(img.clone());
    }
    let cols: Vec<(u32, u32, f64)> = (0..new_w)
        .map(|x| {
            let sx = source_coord(x, w, new_w);
            let x0 = (sx.floor() as u32).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            (x0, x1, sx - x0 as f64)
        })
        .collect();
    let mut data = Vec::with_capacity(new_w as usize * new_h as usize * c);
    for y in 0..new_h {
        let sy = source_coord(y, h, new_h);
        let y0 = (sy.floor() as u32).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for &(x0, x1, fx) in &cols {
            let (p00, p10) = (img.pixel(x0, y0), img.pixel(x1, y0));
            let (p01, p11) = (img.pixel(x0, y1), img.pixel(x1, y1));
            for ch in 0..c {
                let top = p00[ch] as f64 * (1.0 - fx) + p10[ch] as f64 * fx;
                let bottom = p01[ch] as f64 * (1.0 - fx) + p11[ch] as f64 * fx;
                data.push(round_half_up(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Raster::new(new_w, new_h, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_size_is_bitwise_identity() {
        let img = Raster::new(3, 2, 3, (0..18).map(|v| v * 13).collect()).unwrap();
        assert_eq!(resize_bilinear(&img, 3, 2).unwrap(), img);
    }

    #[test]
    fn two_to_three_align_corners() {
        let img = Raster::new(2, 1, 3, vec![0, 0, 0, 255, 255, 255]).unwrap();
        let out = resize_bilinear(&img, 3, 1).unwrap();
        assert_eq!(out.data(), &[0, 0, 0, 128, 128, 128, 255, 255, 255]);
    }

    #[test]
    fn zero_target_rejected() {
        let img = Raster::filled(2, 2, &[1, 2, 3]).unwrap();
        assert!(resize_bilinear(&img, 0, 3).is_err());
    }

    #[test]
    fn alpha_resampled_like_color() {
        let img = Raster::new(2, 1, 4, vec![10, 10, 10, 0, 10, 10, 10, 255]).unwrap();
        let out = resize_bilinear(&img, 3, 1).unwrap();
        assert_eq!(out.pixel(1, 0), &[10, 10, 10, 128]);
    }

    proptest! {
        #[test]
        fn uniform_stays_uniform(w in 1u32..9, h in 1u32..9, nw in 1u32..20, nh in 1u32..20,
                                 px in proptest::array::uniform4(any::<u8>())) {
            let img = Raster::filled(w, h, &px).unwrap();
            let out = resize_bilinear(&img, nw, nh).unwrap();
            prop_assert!(out.data().chunks_exact(4).all(|p| p == px));
        }
    }
}
