//! Growing a bank with synthetic CDP variants through an editing backend.

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};

use crate::bank::Bank;
use crate::decouple::Cdp;
use crate::diffusion::{
    sdedit, ti_train, EditConfig, Identifier, NoiseSchedule, PriorMean, TiConfig, ToyGaussianDenoiser,
};
use crate::error::{Error, Result};
use crate::imagecore::{round_half_up, ClassId, Raster};

/// RGB samples of an RGBA sprite mapped to `[-1, 1]`, interleaved.
pub fn sprite_to_tensor(sprite: &Raster) -> Result<Vec<f64>> {
    sprite.expect_channels(4)?;
    Ok(sprite.data().chunks_exact(4).flat_map(|p| p[..3].iter().map(|&v| v as f64 / 127.5 - 1.0)).collect())
}

/// Inverse of [`sprite_to_tensor`], taking alpha from `like`.
pub fn tensor_to_sprite(tensor: &[f64], like: &Raster) -> Result<Raster> {
    like.expect_channels(4)?;
    if tensor.len() != like.pixel_count() * 3 {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a {}-pixel sprite",
            tensor.len(),
            like.pixel_count()
        )));
    }
    let mut out = like.clone();
    for (p, rgb) in out.data_mut().chunks_exact_mut(4).zip(tensor.chunks_exact(3)) {
        for c in 0..3 {
            p[c] = round_half_up((rgb[c] + 1.0) * 127.5);
        }
    }
    Ok(out)
}

/// A backend able to learn a class identifier and edit sprites with it.
pub trait CdpEditor: Send + Sync {
    /// Whatever names a learned class identifier on this backend.
    type Handle: Send + Sync;

    /// Learn an identifier for `class` from its real sprites, training only
    /// on timesteps an edit at `strength` visits.
    fn learn_identifier(&self, class: ClassId, sprites: &[&Raster], strength: f64, seed: u64) -> Result<Self::Handle>;

    /// Edit an RGBA sprite; the result keeps the sprite's size.
    fn edit(&self, sprite: &Raster, id: &Self::Handle, cfg: &EditConfig) -> Result<Raster>;
}

/// Closed-form Gaussian editor: the identifier is a per-channel prior mean.
#[derive(Debug, Clone)]
pub struct ToyEditor {
    pub schedule: NoiseSchedule,
    pub sigma0: f64,
    pub ti: TiConfig,
}

impl Default for ToyEditor {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            sigma0: 0.5,
            ti: TiConfig { steps: 100, lr: 1e-3, batch_size: 8, ..TiConfig::default() },
        }
    }
}

impl CdpEditor for ToyEditor {
    type Handle = Identifier;

    fn learn_identifier(&self, class: ClassId, sprites: &[&Raster], strength: f64, seed: u64) -> Result<Identifier> {
        let tensors = sprites.iter().map(|s| sprite_to_tensor(s)).collect::<Result<Vec<_>>>()?;
        let den = ToyGaussianDenoiser::trainable(&self.schedule, self.sigma0)?;
        let init = Identifier::new(class, vec![0.0; 3])?;
        let cfg = TiConfig { strength, seed, ..self.ti };
        Ok(ti_train(&init, &tensors, &den, &self.schedule, &cfg)?.identifier)
    }

    fn edit(&self, sprite: &Raster, id: &Identifier, cfg: &EditConfig) -> Result<Raster> {
        let x = sprite_to_tensor(sprite)?;
        let den = ToyGaussianDenoiser::new(&self.schedule, self.sigma0, PriorMean::FromIdentifier)?;
        let y = sdedit(&x, id, cfg, &den, &self.schedule)?;
        tensor_to_sprite(&y, sprite)
    }
}

/// Deterministic per-item seed derived from a base seed and two indices.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpandConfig {
    /// Target number of synthetic variants per real CDP.
    pub multiplier: usize,
    pub strength: f64,
    pub guidance: f64,
    pub seed: u64,
    /// Attempts per variant before it is skipped.
    pub attempts: usize,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        Self {
            multiplier: 3,
            strength: EditConfig::DEFAULT_STRENGTH,
            guidance: EditConfig::DEFAULT_GUIDANCE,
            seed: 0,
            attempts: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpandSummary {
    pub added: usize,
    /// Variants that failed every attempt, as (real CDP id, variant index).
    pub skipped: Vec<(String, usize)>,
    /// Classes whose identifier could not be learned.
    pub failed_classes: Vec<ClassId>,
}

/// Id of the `j`-th synthetic variant of `real_id`.
pub fn variant_id(real_id: &str, j: usize) -> String {
    format!("{real_id}-syn{j}")
}

/// Bring every real CDP up to `multiplier` synthetic variants. Variants that
/// already exist are kept, so an interrupted run can be resumed. With
/// `persist`, each new variant is written to the saved bank immediately.
pub fn expand_bank<E: CdpEditor + ?Sized>(
    bank: &mut Bank,
    editor: &E,
    cfg: &ExpandConfig,
    persist: Option<&Path>,
) -> Result<ExpandSummary> {
    let mut summary = ExpandSummary::default();
    if cfg.multiplier == 0 {
        return Ok(summary);
    }
    let classes: Vec<ClassId> = bank.class_ids().collect();
    for (ci, &class) in classes.iter().enumerate() {
        let reals: Vec<Cdp> = bank.real_cdps(class).cloned().collect();
        let todo: BTreeMap<usize, Vec<usize>> = reals
            .iter()
            .enumerate()
            .map(|(ri, r)| {
                (ri, (0..cfg.multiplier).filter(|&j| bank.cdp(&variant_id(&r.id, j)).is_none()).collect::<Vec<_>>())
            })
            .filter(|(_, js)| !js.is_empty())
            .collect();
        if todo.is_empty() {
            continue;
        }
        let sprites: Vec<&Raster> = reals.iter().map(|r| &r.sprite).collect();
        let id =
            match editor.learn_identifier(class, &sprites, cfg.strength, derive_seed(cfg.seed, ci as u64, u64::MAX)) {
                Ok(id) => id,
                Err(e) => {
                    warn!("identifier for class {class} failed: {e}");
                    summary.failed_classes.push(class);
                    for (ri, js) in &todo {
                        summary.skipped.extend(js.iter().map(|&j| (reals[*ri].id.clone(), j)));
                    }
                    continue;
                }
            };
        for (ri, js) in todo {
            let real = &reals[ri];
            for j in js {
                let edit_cfg = EditConfig {
                    strength: cfg.strength,
                    guidance: cfg.guidance,
                    seed: derive_seed(cfg.seed, ci as u64 * 1_000_003 + ri as u64, j as u64),
                };
                let mut result = Err(Error::Backend("no attempts made".into()));
                for attempt in 0..cfg.attempts.max(1) {
                    result = editor.edit(&real.sprite, &id, &edit_cfg).and_then(|sprite| {
                        if sprite.width() != real.sprite.width()
                            || sprite.height() != real.sprite.height()
                            || !sprite.is_rgba()
                        {
                            return Err(Error::Backend(format!("edited sprite for {} changed shape", real.id)));
                        }
                        Cdp::synthetic(variant_id(&real.id, j), sprite, real, cfg.strength)
                    });
                    match &result {
                        Ok(_) => break,
                        Err(e) => warn!("edit of {} variant {j} failed (attempt {}): {e}", real.id, attempt + 1),
                    }
                }
                match result {
                    Ok(cdp) if cdp.alpha_area > 0.0 => {
                        match persist {
                            Some(dir) => bank.append_synthetic_persisted(dir, cdp)?,
                            None => bank.append_synthetic(cdp)?,
                        }
                        summary.added += 1;
                    }
                    Ok(_) | Err(_) => summary.skipped.push((real.id.clone(), j)),
                }
            }
        }
        info!("class {class}: bank now has {} synthetic CDPs", bank.synthetic_cdps(class).count());
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::ClassInfo;
    use crate::decouple::CdpKind;

    fn sprite(v: u8) -> Raster {
        let mut s = Raster::filled(6, 5, &[v, 255 - v, v / 2, 255]).unwrap();
        s.pixel_mut(0, 0)[3] = 0;
        s
    }

    fn bank() -> Bank {
        let mut bank =
            Bank::new((0..2).map(|i| ClassInfo { id: ClassId(i), name: format!("c{i}") }).collect()).unwrap();
        for c in 0..2u32 {
            for m in 0..2u8 {
                let id = format!("r{c}{m}");
                bank.add_real(Cdp::real(&id, sprite(40 * m + 60 * c as u8), ClassId(c), &id).unwrap()).unwrap();
            }
        }
        bank
    }

    #[test]
    fn tensor_round_trip() {
        let s = sprite(77);
        let t = sprite_to_tensor(&s).unwrap();
        assert!(t.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(tensor_to_sprite(&t, &s).unwrap(), s);
    }

    #[test]
    fn zero_strength_edit_is_identity() {
        let ed = ToyEditor::default();
        let id = Identifier::new(ClassId(0), vec![0.2, 0.1, -0.3]).unwrap();
        let s = sprite(10);
        assert_eq!(ed.edit(&s, &id, &EditConfig::new(0.0, 1).unwrap()).unwrap(), s);
        let edited = ed.edit(&s, &id, &EditConfig::new(0.4, 1).unwrap()).unwrap();
        assert_ne!(edited, s);
        assert_eq!(edited.alpha_mask().unwrap(), s.alpha_mask().unwrap());
    }

    #[test]
    fn expansion_reaches_multiplier_and_is_idempotent() {
        let mut bank = bank();
        let ed = ToyEditor::default();
        let cfg = ExpandConfig { multiplier: 3, ..Default::default() };
        let s = expand_bank(&mut bank, &ed, &cfg, None).unwrap();
        assert_eq!(s.added, 12);
        assert!(s.skipped.is_empty());
        assert_eq!(bank.stats().k, 3);
        bank.verify().unwrap();
        let again = expand_bank(&mut bank, &ed, &cfg, None).unwrap();
        assert_eq!(again.added, 0);
        assert_eq!(bank.cdps().iter().filter(|c| c.kind == CdpKind::Synthetic).count(), 12);
        assert_eq!(
            expand_bank(&mut bank, &ed, &ExpandConfig { multiplier: 0, ..cfg }, None).unwrap(),
            ExpandSummary::default()
        );
    }

    #[test]
    fn expansion_is_deterministic() {
        let (mut a, mut b) = (bank(), bank());
        let cfg = ExpandConfig { multiplier: 2, seed: 5, ..Default::default() };
        expand_bank(&mut a, &ToyEditor::default(), &cfg, None).unwrap();
        expand_bank(&mut b, &ToyEditor::default(), &cfg, None).unwrap();
        assert_eq!(a.cdps(), b.cdps());
    }

    struct Flaky;
    impl CdpEditor for Flaky {
        type Handle = Identifier;

        fn learn_identifier(&self, class: ClassId, _: &[&Raster], _: f64, _: u64) -> Result<Identifier> {
            Identifier::new(class, vec![0.0])
        }
        fn edit(&self, sprite: &Raster, _: &Identifier, cfg: &EditConfig) -> Result<Raster> {
            if cfg.seed.is_multiple_of(2) {
                Err(Error::Backend("boom".into()))
            } else {
                Ok(sprite.clone())
            }
        }
    }

    #[test]
    fn failing_edits_are_skipped() {
        let mut bank = bank();
        let s = expand_bank(&mut bank, &Flaky, &ExpandConfig { multiplier: 3, ..Default::default() }, None).unwrap();
        assert_eq!(s.added + s.skipped.len(), 12);
        assert!(!s.skipped.is_empty());
        bank.verify().unwrap();
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
        assert_ne!(derive_seed(1, 0, 1), derive_seed(1, 1, 0));
        assert_eq!(derive_seed(9, 3, 4), derive_seed(9, 3, 4));
    }
}
