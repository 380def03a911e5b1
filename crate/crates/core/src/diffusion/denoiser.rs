use serde::{Deserialize, Serialize};

use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::imagecore::ClassId;

/// Learned per-class conditioning vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identifier {
    pub class_id: ClassId,
    pub embedding: Vec<f64>,
}

impl Identifier {
    pub fn new(class_id: ClassId, embedding: Vec<f64>) -> Result<Self> {
        if embedding.is_empty() || embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("identifier embedding must be non-empty and finite".into()));
        }
        Ok(Self { class_id, embedding })
    }
}

/// Noise-prediction network contract, ε̂(x_t, t, id).
///
/// Implementations must be deterministic in their inputs and return a vector
/// of the same length as `x_t`. Tensors are flat; whether they hold pixels or
/// latents is up to the implementation.
pub trait Denoiser: Send + Sync {
    fn predict_noise(&self, x_t: &[f64], t: usize, id: &Identifier) -> Result<Vec<f64>>;

    /// Unconditional prediction for classifier-free guidance. Backends
    /// without a separate unconditional branch return `None`, which makes
    /// guidance a no-op.
    fn predict_noise_unconditional(&self, _x_t: &[f64], _t: usize) -> Option<Result<Vec<f64>>> {
        None
    }
}

/// A denoiser whose prediction is differentiable in the identifier.
pub trait TrainableDenoiser: Denoiser {
    /// Vector-Jacobian product `∂/∂c Σ_i upstream_i · ε̂_i(x_t, t, c)`,
    /// one entry per embedding component.
    fn noise_vjp(&self, x_t: &[f64], t: usize, id: &Identifier, upstream: &[f64]) -> Result<Vec<f64>>;
}

/// Where the toy denoiser gets its prior mean.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorMean {
    Fixed(Vec<f64>),
    /// Read μ from the identifier embedding, making it trainable.
    FromIdentifier,
}

/// Exact posterior noise predictor for data `x0 ~ N(μ, σ0²·I)`.
///
/// With `v_t = ᾱ_t·σ0² + 1 − ᾱ_t` and `g_t = √ᾱ_t·σ0²/v_t`:
/// `x̂0 = μ + g_t·(x_t − √ᾱ_t·μ)` and `ε̂ = (x_t − √ᾱ_t·x̂0)/√(1−ᾱ_t)`.
/// A mean shorter than the tensor is broadcast cyclically (`μ[i % len]`), so a
/// length-3 mean acts per RGB channel on interleaved pixels.
#[derive(Debug, Clone)]
pub struct ToyGaussianDenoiser {
    alpha_bar: Vec<f64>,
    sigma0: f64,
    mean: PriorMean,
}

impl ToyGaussianDenoiser {
    pub fn new(sched: &NoiseSchedule, sigma0: f64, mean: PriorMean) -> Result<Self> {
        if sigma0 <= 0.0 || !sigma0.is_finite() {
            return Err(Error::InvalidInput(format!("sigma0 must be positive, got {sigma0}")));
        }
        if let PriorMean::Fixed(m) = &mean {
            if m.is_empty() {
                return Err(Error::InvalidInput("empty prior mean".into()));
            }
        }
        Ok(Self { alpha_bar: sched.alpha_bars().to_vec(), sigma0, mean })
    }

    /// Prior mean read from the identifier embedding.
    pub fn trainable(sched: &NoiseSchedule, sigma0: f64) -> Result<Self> {
        Self::new(sched, sigma0, PriorMean::FromIdentifier)
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    fn mean<'a>(&'a self, id: &'a Identifier) -> &'a [f64] {
        match &self.mean {
            PriorMean::Fixed(m) => m,
            PriorMean::FromIdentifier => &id.embedding,
        }
    }

    fn coefficients(&self, t: usize) -> Result<(f64, f64)> {
        if t == 0 || t >= self.alpha_bar.len() {
            return Err(Error::Backend(format!("timestep {t} outside 1..={}", self.alpha_bar.len() - 1)));
        }
        let ab = self.alpha_bar[t];
        let var = ab * self.sigma0 * self.sigma0 + 1.0 - ab;
        Ok((ab, var))
    }

    /// Posterior mean x̂0 at timestep `t`.
    pub fn predict_x0(&self, x_t: &[f64], t: usize, id: &Identifier) -> Result<Vec<f64>> {
        let (ab, var) = self.coefficients(t)?;
        let mu = self.mean(id);
        let g = ab.sqrt() * self.sigma0 * self.sigma0 / var;
        Ok(x_t
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let m = mu[i % mu.len()];
                m + g * (x - ab.sqrt() * m)
            })
            .collect())
    }
}

impl Denoiser for ToyGaussianDenoiser {
    fn predict_noise(&self, x_t: &[f64], t: usize, id: &Identifier) -> Result<Vec<f64>> {
        let (ab, _) = self.coefficients(t)?;
        let x0 = self.predict_x0(x_t, t, id)?;
        let denom = (1.0 - ab).sqrt();
        Ok(x_t.iter().zip(&x0).map(|(&x, &x0)| (x - ab.sqrt() * x0) / denom).collect())
    }
}

impl TrainableDenoiser for ToyGaussianDenoiser {
    fn noise_vjp(&self, x_t: &[f64], t: usize, id: &Identifier, upstream: &[f64]) -> Result<Vec<f64>> {
        if !matches!(self.mean, PriorMean::FromIdentifier) {
            return Err(Error::Backend("prior mean is fixed; nothing to differentiate".into()));
        }
        if upstream.len() != x_t.len() {
            return Err(Error::DimensionMismatch("upstream gradient vs x_t".into()));
        }
        let (ab, var) = self.coefficients(t)?;
        // ε̂ = (x_t − √ᾱ·μ)·√(1−ᾱ)/v, so ∂ε̂_i/∂μ_i = −√ᾱ·√(1−ᾱ)/v
        let d_eps_d_mu = -(ab * (1.0 - ab)).sqrt() / var;
        let d = id.embedding.len();
        let mut grad = vec![0.0; d];
        for (i, &u) in upstream.iter().enumerate() {
            grad[i % d] += u * d_eps_d_mu;
        }
        Ok(grad)
    }
}
