//! Multinomial logistic regression trained with soft targets.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::imagecore::{LabelVector, Raster};

/// Pixels scaled to `[0, 1]`.
pub fn features(image: &Raster) -> Vec<f64> {
    image.data().iter().map(|&v| v as f64 / 255.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    classes: usize,
    dim: usize,
    /// Row-major `classes × dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, lr: 0.005, batch_size: 16 }
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.iter().map(|e| e / sum).collect()
}

impl LinearModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { classes, dim, weights: vec![0.0; classes * dim], bias: vec![0.0; classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let row = &self.weights[c * self.dim..(c + 1) * self.dim];
                self.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        (0..self.classes).fold(0, |best, c| if logits[c] > logits[best] { c } else { best })
    }

    /// `−Σ_c y_c · log softmax_c(Wx + b)`.
    pub fn loss(&self, x: &[f64], target: &[f64]) -> f64 {
        let logits = self.logits(x);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        target.iter().zip(&logits).map(|(y, l)| -y * (l - lse)).sum()
    }

    /// Add `scale ·` ∂loss/∂(W, b) at `(x, target)` into the accumulators and
    /// return the loss.
    fn accumulate(&self, x: &[f64], target: &[f64], scale: f64, gw: &mut [f64], gb: &mut [f64]) -> f64 {
        let p = self.probabilities(x);
        for c in 0..self.classes {
            let d = (p[c] - target[c]) * scale;
            gb[c] += d;
            if d != 0.0 {
                for (g, v) in gw[c * self.dim..(c + 1) * self.dim].iter_mut().zip(x) {
                    *g += d * v;
                }
            }
        }
        self.loss(x, target)
    }

    /// Mean loss over a batch and its gradient `(∂W, ∂b)`.
    pub fn loss_and_grad(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> (f64, Vec<f64>, Vec<f64>) {
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.classes];
        let scale = 1.0 / batch.len() as f64;
        let loss = batch.iter().map(|(x, y)| self.accumulate(x, y, scale, &mut gw, &mut gb)).sum::<f64>() * scale;
        (loss, gw, gb)
    }

    fn step(&mut self, gw: &[f64], gb: &[f64], lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(gw) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(gb) {
            *b -= lr * g;
        }
    }

    /// Fraction of `(features, class)` pairs classified correctly.
    pub fn accuracy(&self, data: &[(Vec<f64>, usize)]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data.iter().filter(|(x, c)| self.predict(x) == *c).count();
        hits as f64 / data.len() as f64
    }
}

/// Minibatch SGD. Each epoch walks `0..n` in shuffled order and asks `source`
/// for the training pair at each position, so augmentation can be drawn
/// fresh every time. Returns the per-epoch mean loss.
pub fn train_linear<R, F>(
    model: &mut LinearModel,
    n: usize,
    cfg: &TrainConfig,
    rng: &mut R,
    mut source: F,
) -> Result<Vec<f64>>
where
    R: Rng,
    F: FnMut(usize, &mut R) -> Result<(Raster, LabelVector)>,
{
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, label) = source(i, rng)?;
                let x = features(&img);
                if x.len() != model.dim {
                    return Err(Error::DimensionMismatch(format!(
                        "{} features for a {}-input model",
                        x.len(),
                        model.dim
                    )));
                }
                batch.push((x, label.to_dense(model.classes)));
            }
            let (loss, gw, gb) = model.loss_and_grad(&batch);
            if !loss.is_finite() {
                trace.push(loss);
                return Err(Error::Diverged { step: epoch, trace });
            }
            total += loss * chunk.len() as f64;
            model.step(&gw, &gb, cfg.lr);
        }
        trace.push(if n == 0 { 0.0 } else { total / n as f64 });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::ClassId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_model() -> LinearModel {
        let mut m = LinearModel::zeros(3, 5);
        for (i, w) in m.weights_mut().iter_mut().enumerate() {
            *w = ((i * 37 % 11) as f64 - 5.0) * 0.13;
        }
        m.bias_mut().copy_from_slice(&[0.1, -0.2, 0.05]);
        m
    }

    #[test]
    fn gradient_matches_central_differences() {
        let model = toy_model();
        let batch = vec![
            (vec![0.1, 0.9, 0.3, 0.5, 0.2], vec![1.0, 0.0, 0.0]),
            (vec![0.7, 0.2, 0.8, 0.1, 0.6], vec![0.0, 0.75, 0.25]),
        ];
        let (_, gw, gb) = model.loss_and_grad(&batch);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let n_w = model.weights().len();
        for i in 0..n_w + model.bias().len() {
            let bump = |d: f64| {
                let mut m = model.clone();
                if i < n_w {
                    m.weights_mut()[i] += d;
                } else {
                    m.bias_mut()[i - n_w] += d;
                }
                m.loss_and_grad(&batch).0
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let an = if i < n_w { gw[i] } else { gb[i - n_w] };
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn soft_target_loss_difference_is_analytic() {
        let model = toy_model();
        let x = vec![0.3, 0.1, 0.9, 0.4, 0.5];
        let p = model.probabilities(&x);
        let soft = model.loss(&x, &[0.75, 0.25, 0.0]);
        let hard = model.loss(&x, &[1.0, 0.0, 0.0]);
        assert!((soft - hard - 0.25 * (p[0].ln() - p[1].ln())).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_model() {
        let mut model = toy_model();
        let before = model.clone();
        let img = Raster::filled(1, 1, &[10, 200, 30]).unwrap();
        let mut m5 = LinearModel::zeros(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = TrainConfig { epochs: 3, lr: 0.0, batch_size: 2 };
        train_linear(&mut m5, 4, &cfg, &mut rng, |_, _| Ok((img.clone(), LabelVector::one_hot(ClassId(1))))).unwrap();
        assert_eq!(m5, LinearModel::zeros(3, 3));
        model.step(&[0.0; 15], &[0.0; 3], 1.0);
        assert_eq!(model, before);
    }

    #[test]
    fn single_sample_learned_confidently() {
        let img = Raster::filled(2, 2, &[10, 200, 30]).unwrap();
        let mut model = LinearModel::zeros(3, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = TrainConfig { epochs: 400, lr: 0.5, batch_size: 1 };
        let trace =
            train_linear(&mut model, 1, &cfg, &mut rng, |_, _| Ok((img.clone(), LabelVector::one_hot(ClassId(2)))))
                .unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
        assert!(model.probabilities(&features(&img))[2] > 0.99);
    }
}
