use deda_core::diffusion::{
    sdedit, ti_loss, ti_loss_and_grad, ti_train, EditConfig, Identifier, NoiseSchedule, PriorMean, TiConfig,
    ToyGaussianDenoiser,
};
use deda_core::imagecore::ClassId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const MU: f64 = 3.0;
const SIGMA0: f64 = 2.0;

/// Full-strength sampling with the exact-posterior denoiser is an affine map
/// `x_out = p·x0 + q·eps + r`. Track the coefficients through the update,
/// written out independently of the library's loop.
fn affine_chain(sched: &NoiseSchedule) -> (f64, f64, f64) {
    let n = sched.n_infer();
    let ab_top = sched.alpha_bar(sched.timestep(n));
    let (mut p, mut q, mut r) = (ab_top.sqrt(), (1.0 - ab_top).sqrt(), 0.0);
    for j in (1..=n).rev() {
        let ab = sched.alpha_bar(sched.timestep(j));
        let ab_prev = sched.alpha_bar(sched.timestep(j - 1));
        // x̂0 = μ + g(x − √ᾱ μ), ε̂ = (x − √ᾱ x̂0)/√(1−ᾱ)
        let g = ab.sqrt() * SIGMA0 * SIGMA0 / (ab * SIGMA0 * SIGMA0 + 1.0 - ab);
        let x0_gain = g;
        let x0_off = MU - g * ab.sqrt() * MU;
        let e_gain = (1.0 - ab.sqrt() * x0_gain) / (1.0 - ab).sqrt();
        let e_off = -ab.sqrt() * x0_off / (1.0 - ab).sqrt();
        let gain = ab_prev.sqrt() * x0_gain + (1.0 - ab_prev).sqrt() * e_gain;
        let off = ab_prev.sqrt() * x0_off + (1.0 - ab_prev).sqrt() * e_off;
        p *= gain;
        q *= gain;
        r = gain * r + off;
    }
    (p, q, r)
}

#[test]
fn full_strength_sampling_matches_prior() {
    let sched = NoiseSchedule::default();
    let den = ToyGaussianDenoiser::new(&sched, SIGMA0, PriorMean::Fixed(vec![MU])).unwrap();
    let id = Identifier::new(ClassId(0), vec![0.0]).unwrap();
    let prior = Normal::new(MU, SIGMA0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000;
    let xs: Vec<f64> = (0..n)
        .map(|i| {
            let x0 = prior.sample(&mut rng);
            let cfg = EditConfig::new(1.0, i as u64).unwrap();
            sdedit(&[x0], &id, &cfg, &den, &sched).unwrap()[0]
        })
        .collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - MU).abs() < 3.0 * SIGMA0 / 100.0, "mean {mean}");
    assert!((var / (SIGMA0 * SIGMA0) - 1.0).abs() < 0.15, "var {var}");

    // The closed-form composition is the exact law of the sampler. A coarse
    // 25-step deterministic grid shrinks the variance by about 12%.
    let (p, q, r) = affine_chain(&sched);
    let oracle_mean = p * MU + r;
    let oracle_var = p * p * SIGMA0 * SIGMA0 + q * q;
    assert!((oracle_mean - MU).abs() < 1e-3, "oracle mean {oracle_mean}");
    assert!((oracle_var / (SIGMA0 * SIGMA0) - 1.0).abs() < 0.15, "oracle var {oracle_var}");
    assert!((mean - oracle_mean).abs() < 3.0 * oracle_var.sqrt() / 100.0);
    assert!((var / oracle_var - 1.0).abs() < 0.05, "var {var} vs oracle {oracle_var}");
}

#[test]
fn edit_distance_grows_with_strength() {
    let sched = NoiseSchedule::default();
    let den = ToyGaussianDenoiser::new(&sched, SIGMA0, PriorMean::Fixed(vec![MU])).unwrap();
    let id = Identifier::new(ClassId(0), vec![0.0]).unwrap();
    let prior = Normal::new(MU, SIGMA0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs: Vec<Vec<f64>> = (0..100).map(|_| (0..16).map(|_| prior.sample(&mut rng)).collect()).collect();
    let mut last = 0.0;
    for s in [0.2, 0.4, 0.8] {
        let mut total = 0.0;
        for (i, x) in inputs.iter().enumerate() {
            let out = sdedit(x, &id, &EditConfig::new(s, i as u64).unwrap(), &den, &sched).unwrap();
            total += x.iter().zip(&out).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
        let d = total / inputs.len() as f64;
        assert!(d >= last, "distance {d} at s={s} below {last}");
        last = d;
    }
}

fn cdp_batch(seed: u64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let dist = Normal::new(MU, SIGMA0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..dim).map(|_| dist.sample(&mut rng)).collect()).collect()
}

fn grand_mean(batch: &[Vec<f64>]) -> f64 {
    let n: usize = batch.iter().map(Vec::len).sum();
    batch.iter().flatten().sum::<f64>() / n as f64
}

/// Expected truncated objective for a scalar prior mean `mu`, averaging the
/// per-element closed form `a² + b²(x0 − μ)²` over grid indices 1..=k.
fn expected_loss(mu: f64, batch: &[Vec<f64>], k: usize, sched: &NoiseSchedule) -> f64 {
    let mut total = 0.0;
    for j in 1..=k {
        let ab = sched.alpha_bar(sched.timestep(j));
        let v = ab * SIGMA0 * SIGMA0 + 1.0 - ab;
        let a = ab * SIGMA0 * SIGMA0 / v;
        let b = (ab * (1.0 - ab)).sqrt() / v;
        for x0 in batch {
            total += x0.iter().map(|x| a * a + b * b * (x - mu).powi(2)).sum::<f64>();
        }
    }
    total / (k as f64 * batch.len() as f64)
}

#[test]
fn monte_carlo_loss_matches_closed_form() {
    let sched = NoiseSchedule::default();
    let den = ToyGaussianDenoiser::trainable(&sched, SIGMA0).unwrap();
    let batch = cdp_batch(1, 8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for mu in [0.0, 2.0, grand_mean(&batch)] {
        let id = Identifier::new(ClassId(0), vec![mu]).unwrap();
        let reps = 4000;
        let mc: f64 = (0..reps).map(|_| ti_loss(&id, &batch, 0.4, &den, &sched, &mut rng).unwrap().value).sum::<f64>()
            / reps as f64;
        let exact = expected_loss(mu, &batch, 10, &sched);
        assert!((mc - exact).abs() / exact < 0.03, "mu={mu}: mc {mc} vs {exact}");
    }
}

#[test]
fn closed_form_minimizer_is_the_grand_mean() {
    let sched = NoiseSchedule::default();
    let batch = cdp_batch(2, 16, 8);
    let m = grand_mean(&batch);
    let h = 1e-4;
    let slope = (expected_loss(m + h, &batch, 10, &sched) - expected_loss(m - h, &batch, 10, &sched)) / (2.0 * h);
    assert!(slope.abs() < 1e-6, "slope {slope}");
    // convex: both sides are higher
    assert!(expected_loss(m + 0.1, &batch, 10, &sched) > expected_loss(m, &batch, 10, &sched));
    assert!(expected_loss(m - 0.1, &batch, 10, &sched) > expected_loss(m, &batch, 10, &sched));
}

#[test]
fn gradient_matches_finite_difference_with_common_noise() {
    let sched = NoiseSchedule::default();
    let den = ToyGaussianDenoiser::trainable(&sched, SIGMA0).unwrap();
    let batch = cdp_batch(3, 4, 6);
    let c = 1.3;
    let id = |v: f64| Identifier::new(ClassId(0), vec![v]).unwrap();
    let (_, grad) = ti_loss_and_grad(&id(c), &batch, 0.4, &den, &sched, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let h = 1e-5;
    let lp = ti_loss(&id(c + h), &batch, 0.4, &den, &sched, &mut ChaCha8Rng::seed_from_u64(11)).unwrap().value;
    let lm = ti_loss(&id(c - h), &batch, 0.4, &den, &sched, &mut ChaCha8Rng::seed_from_u64(11)).unwrap().value;
    let fd = (lp - lm) / (2.0 * h);
    assert!((grad[0] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{} vs {fd}", grad[0]);
}

#[test]
fn descent_recovers_the_batch_mean() {
    let sched = NoiseSchedule::default();
    let den = ToyGaussianDenoiser::trainable(&sched, SIGMA0).unwrap();
    let cdps = cdp_batch(4, 64, 64);
    let target = grand_mean(&cdps);
    let init = Identifier::new(ClassId(0), vec![0.0]).unwrap();
    let cfg = TiConfig { lr: 5e-3, steps: 400, ..TiConfig::default() };
    let out = ti_train(&init, &cdps, &den, &sched, &cfg).unwrap();
    let c = out.identifier.embedding[0];
    assert_eq!(out.loss_trace.len(), 400);
    assert!((c - target).abs() < 1e-2, "c={c}, mean={target}");
}

#[test]
fn degenerate_training_runs_leave_init() {
    let sched = NoiseSchedule::default();
    let den = ToyGaussianDenoiser::trainable(&sched, SIGMA0).unwrap();
    let cdps = cdp_batch(5, 4, 4);
    let init = Identifier::new(ClassId(0), vec![0.5]).unwrap();
    let zero_steps = ti_train(&init, &cdps, &den, &sched, &TiConfig { steps: 0, ..TiConfig::default() }).unwrap();
    assert_eq!(zero_steps.identifier, init);
    assert!(zero_steps.loss_trace.is_empty());
    let zero_lr =
        ti_train(&init, &cdps, &den, &sched, &TiConfig { lr: 0.0, steps: 50, ..TiConfig::default() }).unwrap();
    assert_eq!(zero_lr.identifier, init);
}

#[test]
fn no_sampled_step_exceeds_truncation() {
    let sched = NoiseSchedule::default();
    let den = ToyGaussianDenoiser::trainable(&sched, SIGMA0).unwrap();
    let id = Identifier::new(ClassId(0), vec![0.0]).unwrap();
    let batch = vec![vec![0.0]; 1000];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut violations = 0;
    let mut seen_max = 0;
    for _ in 0..100 {
        let l = ti_loss(&id, &batch, 0.4, &den, &sched, &mut rng).unwrap();
        violations += l.sampled_steps.iter().filter(|&&j| j == 0 || j > 10).count();
        seen_max = seen_max.max(*l.sampled_steps.iter().max().unwrap());
    }
    assert_eq!(violations, 0);
    assert_eq!(seen_max, 10);
}
