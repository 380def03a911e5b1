//! Hole filling for backgrounds via a validity-weighted (push-pull) pyramid.
//!
//! Push: each coarser level averages only the known pixels beneath it and
//! carries a validity weight `min(1, Σw)`, until no coarse pixel is empty.
//! Pull: coarse-to-fine, every pixel with weight below one is completed from
//! the bilinearly upsampled coarser level. Finally known pixels within
//! `blend_band` (Chebyshev) of the hole are feathered toward the smooth
//! reconstruction so the fill has no hard seam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decouple::{Cip, CipWithHole};
use crate::error::{Error, Result};
use crate::imagecore::{round_half_up, Raster};

/// Holes covering at least this fraction are rejected by [`inpaint_pyramid`].
pub const DEGENERATE_HOLE_COVERAGE: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidConfig {
    /// Upper bound on pyramid depth including the full-resolution level;
    /// `None` descends until every coarse pixel is valid.
    pub max_levels: Option<usize>,
    pub blend_band: u32,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self { max_levels: None, blend_band: 4 }
    }
}

struct Level {
    w: usize,
    h: usize,
    vals: Vec<[f64; 3]>,
    wts: Vec<f64>,
}

impl Level {
    fn all_valid(&self) -> bool {
        self.wts.iter().all(|&w| w > 0.0)
    }

    fn downsample(&self) -> Level {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut vals = vec![[0.0; 3]; w * h];
        let mut wts = vec![0.0; w * h];
        for cy in 0..h {
            for cx in 0..w {
                let mut acc = [0.0; 3];
                let mut sw = 0.0;
                for y in 2 * cy..(2 * cy + 2).min(self.h) {
                    for x in 2 * cx..(2 * cx + 2).min(self.w) {
                        let i = y * self.w + x;
                        let wt = self.wts[i];
                        if wt > 0.0 {
                            for (a, v) in acc.iter_mut().zip(self.vals[i]) {
                                *a += wt * v;
                            }
                            sw += wt;
                        }
                    }
                }
                let i = cy * w + cx;
                if sw > 0.0 {
                    vals[i] = acc.map(|a| a / sw);
                    wts[i] = sw.min(1.0);
                }
            }
        }
        Level { w, h, vals, wts }
    }

    /// Bilinear sample at fine pixel `(x, y)` of the level twice this size.
    fn sample_for_finer(&self, x: usize, y: usize) -> [f64; 3] {
        let fx = ((x as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (self.w - 1) as f64);
        let fy = ((y as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let at = |xx: usize, yy: usize| self.vals[yy * self.w + xx];
        let (a, b, c, d) = (at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1));
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let top = a[ch] * (1.0 - tx) + b[ch] * tx;
            let bot = c[ch] * (1.0 - tx) + d[ch] * tx;
            out[ch] = top * (1.0 - ty) + bot * ty;
        }
        out
    }
}

/// Chebyshev distance to the nearest hole pixel, saturating at `cap`.
fn hole_distance(hole: &[bool], w: usize, h: usize, cap: u32) -> Vec<u32> {
    let inf = cap.saturating_add(1);
    let mut d: Vec<u32> = hole.iter().map(|&b| if b { 0 } else { inf }).collect();
    // two-pass chamfer with unit weights on the 8-neighbourhood is exact for L∞
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut best = d[i];
            if x > 0 {
                best = best.min(d[i - 1] + 1);
            }
            if y > 0 {
                best = best.min(d[i - w] + 1);
                if x > 0 {
                    best = best.min(d[i - w - 1] + 1);
                }
                if x + 1 < w {
                    best = best.min(d[i - w + 1] + 1);
                }
            }
            d[i] = best.min(inf);
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            let mut best = d[i];
            if x + 1 < w {
                best = best.min(d[i + 1] + 1);
            }
            if y + 1 < h {
                best = best.min(d[i + w] + 1);
                if x + 1 < w {
                    best = best.min(d[i + w + 1] + 1);
                }
                if x > 0 {
                    best = best.min(d[i + w - 1] + 1);
                }
            }
            d[i] = best.min(inf);
        }
    }
    d
}

fn cip_id(source_id: &str) -> String {
    format!("cip-{source_id}")
}

/// Fill the hole of `cip` from surrounding image statistics.
pub fn inpaint_pyramid(cip: &CipWithHole, cfg: &PyramidConfig) -> Result<Cip> {
    if cfg.max_levels == Some(0) {
        return Err(Error::InvalidInput("max_levels must be at least 1".into()));
    }
    let px = &cip.pixels;
    px.expect_channels(3)?;
    let (w, h) = (px.width() as usize, px.height() as usize);
    let hole: Vec<bool> = cip.hole.data().iter().map(|&v| v >= 128).collect();
    let n_hole = hole.iter().filter(|&&b| b).count();
    let done = |pixels: Raster| Cip { id: cip_id(&cip.source_id), pixels, source_class: cip.source_class };
    if n_hole == 0 {
        return Ok(done(px.clone()));
    }
    let coverage = n_hole as f64 / hole.len() as f64;
    if coverage >= DEGENERATE_HOLE_COVERAGE {
        return Err(Error::DegenerateHole { coverage });
    }

    let base = Level {
        w,
        h,
        vals: px.data().chunks_exact(3).map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect(),
        wts: hole.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect(),
    };
    let max_levels = cfg.max_levels.unwrap_or(usize::MAX);
    let mut levels = vec![base];
    loop {
        let top = levels.last().expect("non-empty");
        if top.all_valid() || levels.len() >= max_levels || (top.w == 1 && top.h == 1) {
            break;
        }
        let next = top.downsample();
        levels.push(next);
    }

    // Depth cap hit with empty pixels left: seed them with the level mean.
    {
        let top = levels.last_mut().expect("non-empty");
        if !top.all_valid() {
            let mut acc = [0.0; 3];
            let mut sw = 0.0;
            for (v, &wt) in top.vals.iter().zip(&top.wts) {
                for c in 0..3 {
                    acc[c] += wt * v[c];
                }
                sw += wt;
            }
            let mean = acc.map(|a| a / sw);
            for (v, wt) in top.vals.iter_mut().zip(top.wts.iter_mut()) {
                if *wt == 0.0 {
                    *v = mean;
                }
                *wt = 1.0;
            }
        }
    }

    // Pull; the full-resolution smooth estimate is kept for feathering.
    let mut smooth0 = Vec::new();
    for l in (0..levels.len() - 1).rev() {
        let (fine, coarse) = levels.split_at_mut(l + 1);
        let (fine, coarse) = (&mut fine[l], &coarse[0]);
        if l == 0 {
            smooth0.reserve(fine.w * fine.h);
        }
        for y in 0..fine.h {
            for x in 0..fine.w {
                let up = coarse.sample_for_finer(x, y);
                let i = y * fine.w + x;
                let wt = fine.wts[i];
                if wt < 1.0 {
                    for (v, u) in fine.vals[i].iter_mut().zip(up) {
                        *v = wt * *v + (1.0 - wt) * u;
                    }
                    fine.wts[i] = 1.0;
                }
                if l == 0 {
                    smooth0.push(up);
                }
            }
        }
    }

    let band = cfg.blend_band;
    let dist = hole_distance(&hole, w, h, band);
    let filled = &levels[0].vals;
    let mut out = px.clone();
    for (i, p) in out.data_mut().chunks_exact_mut(3).enumerate() {
        let d = dist[i];
        if d == 0 {
            for c in 0..3 {
                p[c] = round_half_up(filled[i][c]);
            }
        } else if d <= band {
            let a = (band + 1 - d) as f64 / (band + 1) as f64;
            for c in 0..3 {
                p[c] = round_half_up((1.0 - a) * p[c] as f64 + a * smooth0[i][c]);
            }
        }
    }
    Ok(done(out))
}

/// Fill the hole with the mean known colour plus uniform noise of half-width
/// `noise_sigma`. Fallback for holes too large for [`inpaint_pyramid`].
pub fn fill_mean_color(cip: &CipWithHole, noise_sigma: f64, seed: u64) -> Result<Cip> {
    let px = &cip.pixels;
    px.expect_channels(3)?;
    let mut acc = [0u64; 3];
    let mut n = 0u64;
    for (p, &hv) in px.data().chunks_exact(3).zip(cip.hole.data()) {
        if hv < 128 {
            for c in 0..3 {
                acc[c] += p[c] as u64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("CIP has no known pixels".into()));
    }
    let mean = acc.map(|a| a as f64 / n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = px.clone();
    for (p, &hv) in out.data_mut().chunks_exact_mut(3).zip(cip.hole.data()) {
        if hv >= 128 {
            for c in 0..3 {
                let noise = if noise_sigma > 0.0 { rng.random_range(-noise_sigma..=noise_sigma) } else { 0.0 };
                p[c] = round_half_up(mean[c] + noise);
            }
        }
    }
    Ok(Cip { id: cip_id(&cip.source_id), pixels: out, source_class: cip.source_class })
}

/// Pyramid fill, falling back to the mean colour when the hole is degenerate.
pub fn inpaint(cip: &CipWithHole, cfg: &PyramidConfig, seed: u64) -> Result<Cip> {
    match inpaint_pyramid(cip, cfg) {
        Err(Error::DegenerateHole { coverage }) => {
            log::warn!("{}: hole covers {coverage:.3}, using mean-colour fill", cip.source_id);
            fill_mean_color(cip, 8.0, seed)
        }
        other => other,
    }
}
