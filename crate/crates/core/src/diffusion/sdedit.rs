use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Denoiser, Identifier, NoiseSchedule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditConfig {
    /// Fraction of the inference trajectory to re-traverse, in `[0, 1]`.
    pub strength: f64,
    /// Classifier-free guidance scale; ignored by denoisers without an
    /// unconditional branch.
    pub guidance: f64,
    pub seed: u64,
}

impl EditConfig {
    pub const DEFAULT_STRENGTH: f64 = 0.4;
    pub const DEFAULT_GUIDANCE: f64 = 7.0;

    pub fn new(strength: f64, seed: u64) -> Result<Self> {
        let cfg = Self { strength, guidance: Self::DEFAULT_GUIDANCE, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::InvalidInput(format!("strength {} outside [0, 1]", self.strength)));
        }
        if !self.guidance.is_finite() {
            return Err(Error::InvalidInput("guidance must be finite".into()));
        }
        Ok(())
    }
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `x_k = √ᾱ·x0 + √(1−ᾱ)·eps` at the timestep of inference index `k`.
pub fn forward_noise(x0: &[f64], k: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if eps.len() != x0.len() {
        return Err(Error::DimensionMismatch(format!("eps has {} entries, x0 has {}", eps.len(), x0.len())));
    }
    if k > sched.n_infer() {
        return Err(Error::InvalidInput(format!("index {k} beyond {} inference steps", sched.n_infer())));
    }
    if k == 0 {
        return Ok(x0.to_vec());
    }
    let ab = sched.alpha_bar(sched.timestep(k));
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

fn checked(pred: Result<Vec<f64>>, len: usize, t: usize) -> Result<Vec<f64>> {
    let pred = pred.map_err(|e| match e {
        Error::Backend(_) => e,
        other => Error::Backend(other.to_string()),
    })?;
    if pred.len() != len {
        return Err(Error::Backend(format!(
            "denoiser returned {} values for a {len}-value input at t={t}",
            pred.len()
        )));
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::Backend(format!("denoiser returned non-finite values at t={t}")));
    }
    Ok(pred)
}

/// Noise prediction with classifier-free guidance when the backend offers an
/// unconditional branch.
pub fn guided_noise(den: &dyn Denoiser, x: &[f64], t: usize, id: &Identifier, guidance: f64) -> Result<Vec<f64>> {
    let cond = checked(den.predict_noise(x, t, id), x.len(), t)?;
    match den.predict_noise_unconditional(x, t) {
        None => Ok(cond),
        Some(uncond) => {
            let uncond = checked(uncond, x.len(), t)?;
            Ok(uncond.iter().zip(&cond).map(|(u, c)| u + guidance * (c - u)).collect())
        }
    }
}

/// Noise `x0_ref` to the truncation point implied by the strength, then run
/// the deterministic reverse update back to timestep 0:
///
/// `x̂0 = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`, `x_prev = √ᾱ_prev·x̂0 + √(1−ᾱ_prev)·ε̂`.
///
/// Strength 0 returns the input untouched, whatever the denoiser.
pub fn sdedit(
    x0_ref: &[f64],
    id: &Identifier,
    cfg: &EditConfig,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x0_ref.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("sdedit input has non-finite values".into()));
    }
    let k = sched.truncation_index(cfg.strength)?;
    if k == 0 {
        return Ok(x0_ref.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps = standard_normal(&mut rng, x0_ref.len());
    let mut x = forward_noise(x0_ref, k, &eps, sched)?;
    for j in (1..=k).rev() {
        let t = sched.timestep(j);
        let t_prev = sched.timestep(j - 1);
        let eps_hat = guided_noise(den, &x, t, id, cfg.guidance)?;
        let ab = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t_prev);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        for (xi, &e) in x.iter_mut().zip(&eps_hat) {
            let x0_hat = (*xi - sb * e) / sa;
            *xi = pa * x0_hat + pb * e;
        }
    }
    Ok(x)
}
