//! Truncated-timestep textual inversion: fit the conditioning vector using
//! only the timesteps an edit at strength `s` will actually visit.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sdedit::{forward_noise, standard_normal};
use super::{Denoiser, Identifier, NoiseSchedule, TrainableDenoiser};
use crate::error::{Error, Result};

/// One stochastic evaluation of the inversion objective.
#[derive(Debug, Clone, PartialEq)]
pub struct TiLoss {
    /// Mean over the batch of `‖eps − ε̂(x_t, t, c)‖²`.
    pub value: f64,
    /// Inference-grid index drawn for each batch item.
    pub sampled_steps: Vec<usize>,
}

/// Draw an inference-grid index uniformly from `1..=k`.
pub fn sample_truncated_step<R: Rng>(k: usize, rng: &mut R) -> usize {
    let j = rng.random_range(1..=k);
    assert!(j >= 1 && j <= k, "sampled step {j} outside 1..={k}");
    j
}

struct Draw {
    x_t: Vec<f64>,
    t: usize,
    residual: Vec<f64>,
}

fn draw_terms(
    c: &Identifier,
    batch: &[Vec<f64>],
    k: usize,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Draw>, Vec<usize>, f64)> {
    let mut draws = Vec::with_capacity(batch.len());
    let mut steps = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    for x0 in batch {
        let j = sample_truncated_step(k, rng);
        let eps = standard_normal(rng, x0.len());
        let x_t = forward_noise(x0, j, &eps, sched)?;
        let t = sched.timestep(j);
        let pred = den.predict_noise(&x_t, t, c)?;
        if pred.len() != x0.len() {
            return Err(Error::Backend("denoiser output shape differs from input".into()));
        }
        let residual: Vec<f64> = eps.iter().zip(&pred).map(|(e, p)| e - p).collect();
        total += residual.iter().map(|r| r * r).sum::<f64>();
        steps.push(j);
        draws.push(Draw { x_t, t, residual });
    }
    Ok((draws, steps, total / batch.len() as f64))
}

fn truncation(strength: f64, sched: &NoiseSchedule) -> Result<usize> {
    match sched.truncation_index(strength)? {
        0 => Err(Error::InvalidStrength(strength)),
        k => Ok(k),
    }
}

/// Monte-Carlo estimate of the truncated inversion objective at `c`.
pub fn ti_loss(
    c: &Identifier,
    batch: &[Vec<f64>],
    strength: f64,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<TiLoss> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty inversion batch".into()));
    }
    let k = truncation(strength, sched)?;
    let (_, sampled_steps, value) = draw_terms(c, batch, k, den, sched, rng)?;
    Ok(TiLoss { value, sampled_steps })
}

/// Loss and its gradient in the embedding, from the same draws.
pub fn ti_loss_and_grad(
    c: &Identifier,
    batch: &[Vec<f64>],
    strength: f64,
    den: &dyn TrainableDenoiser,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<(TiLoss, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty inversion batch".into()));
    }
    let k = truncation(strength, sched)?;
    let (draws, sampled_steps, value) = draw_terms(c, batch, k, den, sched, rng)?;
    let mut grad = vec![0.0; c.embedding.len()];
    for d in &draws {
        // ∂‖eps − ε̂‖²/∂ε̂ = −2(eps − ε̂)
        let upstream: Vec<f64> = d.residual.iter().map(|r| -2.0 * r).collect();
        let g = den.noise_vjp(&d.x_t, d.t, c, &upstream)?;
        if g.len() != grad.len() {
            return Err(Error::Backend("identifier gradient has the wrong length".into()));
        }
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((TiLoss { value, sampled_steps }, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiConfig {
    pub strength: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TiConfig {
    fn default() -> Self {
        Self { strength: 0.4, steps: 400, lr: 1e-4, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiOutcome {
    pub identifier: Identifier,
    pub loss_trace: Vec<f64>,
}

/// Plain gradient descent on the truncated objective. Each step draws a
/// batch without replacement (the whole set when it is no larger than
/// `batch_size`) with fresh timesteps and noise.
pub fn ti_train(
    init: &Identifier,
    cdps: &[Vec<f64>],
    den: &dyn TrainableDenoiser,
    sched: &NoiseSchedule,
    cfg: &TiConfig,
) -> Result<TiOutcome> {
    if cdps.is_empty() {
        return Err(Error::InvalidInput("no CDPs to invert".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    truncation(cfg.strength, sched)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut c = init.clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<Vec<f64>> = if cdps.len() <= cfg.batch_size {
            cdps.to_vec()
        } else {
            index::sample(&mut rng, cdps.len(), cfg.batch_size).into_iter().map(|i| cdps[i].clone()).collect()
        };
        let (loss, grad) = ti_loss_and_grad(&c, &batch, cfg.strength, den, sched, &mut rng)?;
        trace.push(loss.value);
        if !loss.value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, trace });
        }
        for (w, g) in c.embedding.iter_mut().zip(&grad) {
            *w -= cfg.lr * g;
        }
    }
    Ok(TiOutcome { identifier: c, loss_trace: trace })
}
