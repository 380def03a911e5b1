use crate::error::{Error, Result};

/// Linear-β variance-preserving noise schedule with an inference sub-grid.
///
/// Timesteps run `0..=n_train`; `alpha_bar(0) == 1` is the clean sample. The
/// inference grid has `n_infer + 1` entries: index 0 is timestep 0 and
/// indices `1..=n_infer` are evenly spaced over `[1, n_train]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    n_train: usize,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    grid: Vec<usize>,
}

impl NoiseSchedule {
    pub const DEFAULT_TRAIN_STEPS: usize = 1000;
    pub const DEFAULT_BETA_MIN: f64 = 1e-4;
    pub const DEFAULT_BETA_MAX: f64 = 0.02;
    pub const DEFAULT_INFER_STEPS: usize = 25;

    pub fn new(n_train: usize, beta_min: f64, beta_max: f64, n_infer: usize) -> Result<Self> {
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidInput(format!("need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")));
        }
        if n_infer == 0 || n_infer > n_train {
            return Err(Error::InvalidInput(format!(
                "need 1 <= n_infer <= n_train, got n_infer={n_infer}, n_train={n_train}"
            )));
        }
        let betas: Vec<f64> = (0..n_train)
            .map(|i| {
                if n_train == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (n_train - 1) as f64
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(n_train + 1);
        alpha_bar.push(1.0);
        for b in &betas {
            let prev = *alpha_bar.last().expect("seeded with 1");
            alpha_bar.push(prev * (1.0 - b));
        }
        let mut grid = Vec::with_capacity(n_infer + 1);
        grid.push(0);
        if n_infer == 1 {
            grid.push(n_train);
        } else {
            let step = (n_train - 1) as f64 / (n_infer - 1) as f64;
            grid.extend((0..n_infer).map(|k| (1.0 + k as f64 * step + 0.5).floor() as usize));
        }
        Ok(Self { n_train, betas, alpha_bar, grid })
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_infer(&self) -> usize {
        self.grid.len() - 1
    }

    /// β_t for `t` in `1..=n_train`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// ᾱ_t for `t` in `0..=n_train`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Training timestep of inference-grid index `k`.
    pub fn timestep(&self, k: usize) -> usize {
        self.grid[k]
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    /// Number of inference steps re-traversed at edit strength `s`:
    /// `floor(s · n_infer)`, so 0 is no edit and 1 is generation from noise.
    pub fn truncation_index(&self, strength: f64) -> Result<usize> {
        truncation_index(strength, self.n_infer())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(Self::DEFAULT_TRAIN_STEPS, Self::DEFAULT_BETA_MIN, Self::DEFAULT_BETA_MAX, Self::DEFAULT_INFER_STEPS)
            .expect("default schedule is valid")
    }
}

/// `floor(s · n_infer)`. A 1e-9 slack absorbs products like `0.29 · 100`
/// that land a hair under an integer.
pub fn truncation_index(strength: f64, n_infer: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidInput(format!("strength {strength} outside [0, 1]")));
    }
    Ok(((strength * n_infer as f64 + 1e-9).floor() as usize).min(n_infer))
}
