use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linear::{features, train_linear, LinearModel, TrainConfig};
use super::shapes::{gen_shapes_dataset, swapped_backgrounds, Shape, ShapeSample, ShapesConfig};
use crate::bank::{Bank, ClassInfo};
use crate::combiner::{next_training_sample, CombinerPolicy, RealItem};
use crate::decouple::{extract_cdp, extract_cip, CdpKind};
use crate::diffusion::EditConfig;
use crate::error::{Error, Result};
use crate::expand::{derive_seed, expand_bank, CdpEditor, ExpandConfig};
use crate::imagecore::{psnr, ClassId, LabelVector};
use crate::inpaint::{inpaint, PyramidConfig};
use crate::mixers::{cutmix, LambdaSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Cutmix,
    Deda,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::None, Method::Cutmix, Method::Deda];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Cutmix => "cutmix",
            Method::Deda => "deda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    /// `None` on the per-method mean row.
    pub seed: Option<u64>,
    pub id_accuracy: f64,
    pub swapped_accuracy: f64,
    /// Mean PSNR between synthetic CDPs and their parents, where applicable.
    pub mean_psnr: Option<f64>,
    pub seeds: usize,
    pub runtime_s: f64,
}

impl ReportRow {
    pub fn gap(&self) -> f64 {
        self.id_accuracy - self.swapped_accuracy
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// Per-seed rows followed by one mean row per method.
    fn from_runs(mut runs: Vec<ReportRow>) -> Self {
        runs.sort_by_key(|r| (r.method, r.seed));
        let mut rows = runs.clone();
        let mut methods: Vec<Method> = runs.iter().map(|r| r.method).collect();
        methods.dedup();
        for m in methods {
            let mine: Vec<&ReportRow> = runs.iter().filter(|r| r.method == m).collect();
            let n = mine.len() as f64;
            let psnrs: Vec<f64> = mine.iter().filter_map(|r| r.mean_psnr).collect();
            rows.push(ReportRow {
                method: m,
                seed: None,
                id_accuracy: mine.iter().map(|r| r.id_accuracy).sum::<f64>() / n,
                swapped_accuracy: mine.iter().map(|r| r.swapped_accuracy).sum::<f64>() / n,
                mean_psnr: (!psnrs.is_empty()).then(|| psnrs.iter().sum::<f64>() / psnrs.len() as f64),
                seeds: mine.len(),
                runtime_s: mine.iter().map(|r| r.runtime_s).sum(),
            });
        }
        Self { rows }
    }

    pub fn mean(&self, method: Method) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.seed.is_none())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\tseed\tid_accuracy\tswapped_accuracy\tgap\tmean_psnr\tseeds\truntime_s\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{:.2}",
                r.method.name(),
                r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()),
                r.id_accuracy,
                r.swapped_accuracy,
                r.gap(),
                r.mean_psnr.map_or_else(|| "-".to_string(), |p| format!("{p:.2}")),
                r.seeds,
                r.runtime_s
            );
        }
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessConfig {
    pub shapes: ShapesConfig,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub train: TrainConfig,
    pub policy: CombinerPolicy,
    /// Probability that a training item is replaced by a CutMix pair.
    pub cutmix_prob: f64,
    pub expand: ExpandConfig,
    pub workers: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            shapes: ShapesConfig::default(),
            seeds: (0..5).collect(),
            methods: Method::ALL.to_vec(),
            train: TrainConfig::default(),
            policy: CombinerPolicy::default(),
            cutmix_prob: 0.5,
            expand: ExpandConfig::default(),
            workers: 1,
        }
    }
}

/// Bank built from ground-truth masks: one real CDP and one inpainted CIP per
/// training image.
pub fn bank_from_samples(samples: &[ShapeSample], classes: usize, seed: u64) -> Result<Bank> {
    let infos = Shape::ALL[..classes]
        .iter()
        .enumerate()
        .map(|(i, s)| ClassInfo { id: ClassId(i as u32), name: s.name().to_string() })
        .collect();
    let mut bank = Bank::new(infos)?;
    let pyramid = PyramidConfig::default();
    for (i, s) in samples.iter().enumerate() {
        let (cdp, _) = extract_cdp(&s.image, &s.mask, s.spec.class_id, &s.id)?;
        let hole = extract_cip(&s.image, &s.mask, s.spec.class_id, &s.id)?;
        bank.add_real(cdp)?;
        bank.add_cip(inpaint(&hole, &pyramid, derive_seed(seed, i as u64, 0))?)?;
    }
    Ok(bank)
}

/// Mean PSNR between each synthetic CDP and its parent.
pub fn synthetic_psnr(bank: &Bank) -> Option<f64> {
    let values: Vec<f64> = bank
        .cdps()
        .iter()
        .filter(|c| c.kind == CdpKind::Synthetic)
        .filter_map(|c| {
            let parent = bank.cdp(c.parent_id.as_deref()?)?;
            psnr(&parent.sprite, &c.sprite).ok()
        })
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

type Features = Vec<(Vec<f64>, usize)>;

fn labelled(samples: &[ShapeSample]) -> Features {
    samples.iter().map(|s| (features(&s.image), s.spec.class_id.0 as usize)).collect()
}

fn run_arm(
    cfg: &RobustnessConfig,
    method: Method,
    seed: u64,
    train: &[ShapeSample],
    bank: Option<&Bank>,
    id_test: &Features,
    swapped_test: &Features,
) -> Result<ReportRow> {
    let start = Instant::now();
    let classes = cfg.shapes.classes;
    let dim = (cfg.shapes.canvas * cfg.shapes.canvas * 3) as usize;
    let mut model = LinearModel::zeros(classes, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, method as u64, 7));
    let one_hot = |s: &ShapeSample| LabelVector::one_hot(s.spec.class_id);
    match method {
        Method::None => {
            train_linear(&mut model, train.len(), &cfg.train, &mut rng, |i, _| {
                Ok((train[i].image.clone(), one_hot(&train[i])))
            })?;
        }
        Method::Cutmix => {
            train_linear(&mut model, train.len(), &cfg.train, &mut rng, |i, rng| {
                let a = &train[i];
                if rng.random_bool(cfg.cutmix_prob) {
                    let b = &train[rng.random_range(0..train.len())];
                    let m =
                        cutmix((&a.image, a.spec.class_id), (&b.image, b.spec.class_id), LambdaSampler::Uniform, rng)?;
                    Ok((m.image, m.label))
                } else {
                    Ok((a.image.clone(), one_hot(a)))
                }
            })?;
        }
        Method::Deda => {
            let bank = bank.ok_or_else(|| Error::InvalidInput("deda arm needs a bank".into()))?;
            train_linear(&mut model, train.len(), &cfg.train, &mut rng, |i, rng| {
                let s = &train[i];
                let item = RealItem { id: &s.id, image: &s.image, class_id: s.spec.class_id };
                let out = next_training_sample(item, bank, &cfg.policy, rng)?;
                Ok((out.image, out.label))
            })?;
        }
    }
    Ok(ReportRow {
        method,
        seed: Some(seed),
        id_accuracy: model.accuracy(id_test),
        swapped_accuracy: model.accuracy(swapped_test),
        mean_psnr: if method == Method::Deda { bank.and_then(synthetic_psnr) } else { None },
        seeds: 1,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

fn run_seed<E: CdpEditor + ?Sized>(cfg: &RobustnessConfig, editor: &E, seed: u64) -> Result<Vec<ReportRow>> {
    let shapes = ShapesConfig { seed, ..cfg.shapes };
    let data = gen_shapes_dataset(&shapes)?;
    let swapped = swapped_backgrounds(&shapes, &data.test, derive_seed(seed, 1, 1));
    let id_test = labelled(&data.test);
    let swapped_test = labelled(&swapped);
    let bank = if cfg.methods.contains(&Method::Deda) {
        let mut bank = bank_from_samples(&data.train, shapes.classes, seed)?;
        let expand = ExpandConfig { seed: derive_seed(seed, 2, 2), ..cfg.expand };
        let summary = expand_bank(&mut bank, editor, &expand, None)?;
        if !summary.skipped.is_empty() {
            return Err(Error::Backend(format!("{} synthetic CDPs could not be generated", summary.skipped.len())));
        }
        Some(bank)
    } else {
        None
    };
    cfg.methods
        .iter()
        .map(|&m| {
            let row = run_arm(cfg, m, seed, &data.train, bank.as_ref(), &id_test, &swapped_test)?;
            info!(
                "seed {seed} {}: id {:.3} swapped {:.3} ({:.1}s)",
                m.name(),
                row.id_accuracy,
                row.swapped_accuracy,
                row.runtime_s
            );
            Ok(row)
        })
        .collect()
}

/// Train every method on every seed and evaluate on the in-distribution and
/// background-swapped test splits.
pub fn run_background_robustness<E: CdpEditor + ?Sized>(
    cfg: &RobustnessConfig,
    editor: &E,
) -> Result<ExperimentReport> {
    cfg.shapes.validate()?;
    cfg.policy.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let per_seed =
        pool.install(|| cfg.seeds.par_iter().map(|&s| run_seed(cfg, editor, s)).collect::<Result<Vec<_>>>())?;
    Ok(ExperimentReport::from_runs(per_seed.into_iter().flatten().collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityPoint {
    pub strength: f64,
    pub mean_psnr: f64,
    pub count: usize,
}

/// Edit the first `n` real CDPs (in bank order) at each strength and report
/// the mean PSNR between original and edit. Identifiers are learned once per
/// class at the default strength.
pub fn run_diversity_report<E: CdpEditor + ?Sized>(
    bank: &Bank,
    editor: &E,
    strengths: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<DiversityPoint>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let reals: Vec<_> = bank.cdps().iter().filter(|c| c.kind == CdpKind::Real).take(n).collect();
    let mut ids = std::collections::BTreeMap::new();
    for (ci, class) in bank.class_ids().enumerate() {
        let sprites: Vec<_> = bank.real_cdps(class).map(|c| &c.sprite).collect();
        if sprites.is_empty() || !reals.iter().any(|c| c.class_id == class) {
            continue;
        }
        let id =
            editor.learn_identifier(class, &sprites, EditConfig::DEFAULT_STRENGTH, derive_seed(seed, ci as u64, 3))?;
        ids.insert(class, id);
    }
    strengths
        .iter()
        .map(|&strength| {
            let mut total = 0.0;
            for (i, cdp) in reals.iter().enumerate() {
                let cfg = EditConfig { seed: derive_seed(seed, i as u64, 4), ..EditConfig::new(strength, 0)? };
                let edited = editor.edit(&cdp.sprite, &ids[&cdp.class_id], &cfg)?;
                total += psnr(&cdp.sprite, &edited)?;
            }
            Ok(DiversityPoint { strength, mean_psnr: total / reals.len() as f64, count: reals.len() })
        })
        .collect()
}
