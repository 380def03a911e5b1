//! Online randomized recombination of CDPs with CIPs.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::Bank;
use crate::decouple::{Cdp, CdpKind, Cip};
use crate::error::{Error, Result};
use crate::imagecore::{save_raster, transform_sprite, ClassId, LabelVector, Placement, Raster};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;
pub const MAX_SAMPLE_RETRIES: usize = 10;
pub const MIN_CANVAS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CombinerPolicy {
    /// Probability that a real training item is replaced by an augmented one.
    pub p_aug: f64,
    /// Probability of drawing a synthetic rather than real CDP.
    pub p_syn: f64,
    /// Probability of pasting a second CDP from another class.
    pub p_mix: f64,
    /// Scale bounds as fractions of the largest scale that fits the canvas.
    pub scale_range: [f64; 2],
    /// Minimum share of a sprite's alpha area that must land on the canvas.
    pub min_visible_frac: f64,
    pub hflip_prob: f64,
    /// Never pair a CDP with a CIP from its own class.
    pub strict_inter_class_cip: bool,
}

impl Default for CombinerPolicy {
    fn default() -> Self {
        Self {
            p_aug: 0.5,
            p_syn: 0.25,
            p_mix: 0.5,
            scale_range: [0.5, 1.0],
            min_visible_frac: 0.7,
            hflip_prob: 0.5,
            strict_inter_class_cip: true,
        }
    }
}

impl CombinerPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in
            [("p_aug", self.p_aug), ("p_syn", self.p_syn), ("p_mix", self.p_mix), ("hflip_prob", self.hflip_prob)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("{name}={p} is not a probability")));
            }
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidInput(format!("scale range [{lo}, {hi}] must satisfy 0 < lo <= hi")));
        }
        if !(self.min_visible_frac > 0.0 && self.min_visible_frac <= 1.0) {
            return Err(Error::InvalidInput(format!("min_visible_frac {} outside (0, 1]", self.min_visible_frac)));
        }
        Ok(())
    }
}

/// One CDP as placed in a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedCdp {
    pub id: String,
    pub class_id: ClassId,
    pub kind: CdpKind,
    pub placement: Placement,
    /// Alpha area still visible after clipping and occlusion.
    pub visible_area: f64,
}

/// Everything needed to rebuild a sample without the rng.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream: Option<u64>,
    /// Set when the sample is an untouched real item.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_item: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cip_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cdps: Vec<PlacedCdp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub image: Raster,
    pub label: LabelVector,
    pub provenance: Provenance,
}

impl AugmentedSample {
    pub fn is_augmented(&self) -> bool {
        self.provenance.real_item.is_none()
    }

    pub fn is_mixed(&self) -> bool {
        self.provenance.cdps.len() > 1
    }
}

/// A transformed sprite and where its top-left corner lands.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub sprite: Raster,
    pub offset_x: i64,
    pub offset_y: i64,
}

impl Layer {
    pub fn new(sprite: &Raster, placement: &Placement) -> Result<Self> {
        Ok(Self {
            sprite: transform_sprite(sprite, placement.scale, placement.flip_h)?,
            offset_x: placement.offset_x,
            offset_y: placement.offset_y,
        })
    }

    fn alpha_at(&self, x: i64, y: i64) -> u32 {
        let (sx, sy) = (x - self.offset_x, y - self.offset_y);
        if sx < 0 || sy < 0 || sx >= self.sprite.width() as i64 || sy >= self.sprite.height() as i64 {
            0
        } else {
            self.sprite.pixel(sx as u32, sy as u32)[3] as u32
        }
    }
}

/// Paste `layers` in order (later over earlier) and report each layer's
/// visible area: `Σ α_i/255 · Π_{j>i} (1 − α_j/255)` over canvas pixels.
pub fn composite_layers(base: &Raster, layers: &[Layer]) -> Result<(Raster, Vec<f64>)> {
    let mut out = base.clone();
    for l in layers {
        crate::imagecore::paste_over(&mut out, &l.sprite, l.offset_x, l.offset_y)?;
    }
    let mut areas = vec![0.0; layers.len()];
    let mut alphas = vec![0u32; layers.len()];
    for y in 0..base.height() as i64 {
        for x in 0..base.width() as i64 {
            for (a, l) in alphas.iter_mut().zip(layers) {
                *a = l.alpha_at(x, y);
            }
            let mut transmit = 1.0;
            for i in (0..layers.len()).rev() {
                let a = alphas[i] as f64 / 255.0;
                areas[i] += a * transmit;
                transmit *= 1.0 - a;
            }
        }
    }
    Ok((out, areas))
}

/// Summed-area table over a sprite's alpha channel.
struct AlphaIntegral {
    width: usize,
    sums: Vec<u64>,
}

impl AlphaIntegral {
    fn new(sprite: &Raster) -> Self {
        let (w, h) = (sprite.width() as usize, sprite.height() as usize);
        let mut sums = vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += sprite.pixel(x as u32, y as u32)[3] as u64;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { width: w, sums }
    }

    fn total(&self) -> u64 {
        *self.sums.last().expect("non-empty table")
    }

    /// Alpha sum over sprite columns `x0..x1`, rows `y0..y1`.
    fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        let s = |x: usize, y: usize| self.sums[y * (self.width + 1) + x];
        s(x1, y1) + s(x0, y0) - s(x0, y1) - s(x1, y0)
    }

    /// Alpha sum of the part of the sprite that lands on a `cw`x`ch` canvas.
    fn inside(&self, sw: i64, sh: i64, ox: i64, oy: i64, cw: i64, ch: i64) -> u64 {
        let x0 = (-ox).clamp(0, sw);
        let y0 = (-oy).clamp(0, sh);
        let x1 = (cw - ox).clamp(0, sw);
        let y1 = (ch - oy).clamp(0, sh);
        if x0 >= x1 || y0 >= y1 {
            return 0;
        }
        self.rect(x0 as usize, y0 as usize, x1 as usize, y1 as usize)
    }
}

/// Draw scale, flip and offset for `sprite` on a `canvas_w`x`canvas_h`
/// canvas. Offsets are rejection-sampled until at least `min_visible_frac`
/// of the alpha area is on the canvas; after the last attempt the offset is
/// clamped so the sprite lies fully inside.
pub fn draw_placement<R: Rng>(
    canvas_w: u32,
    canvas_h: u32,
    sprite: &Raster,
    policy: &CombinerPolicy,
    rng: &mut R,
) -> Result<(Layer, Placement)> {
    if canvas_w < MIN_CANVAS || canvas_h < MIN_CANVAS {
        return Err(Error::Placement(format!("canvas {canvas_w}x{canvas_h} is below {MIN_CANVAS}x{MIN_CANVAS}")));
    }
    let fit = (canvas_w as f64 / sprite.width() as f64).min(canvas_h as f64 / sprite.height() as f64);
    let [lo, hi] = policy.scale_range;
    let scale = fit * rng.random_range(lo..=hi);
    let flip_h = rng.random_bool(policy.hflip_prob);
    let transformed = transform_sprite(sprite, scale, flip_h)?;
    let (sw, sh) = (transformed.width() as i64, transformed.height() as i64);
    let (cw, ch) = (canvas_w as i64, canvas_h as i64);
    let integral = AlphaIntegral::new(&transformed);
    let total = integral.total();
    let need = policy.min_visible_frac * total as f64;

    let finish = |sprite: Raster, offset_x: i64, offset_y: i64| {
        let placement = Placement { scale, flip_h, offset_x, offset_y };
        (Layer { sprite, offset_x, offset_y }, placement)
    };
    let (mut ox, mut oy) = (0, 0);
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        ox = rng.random_range(1 - sw..cw);
        oy = rng.random_range(1 - sh..ch);
        if total == 0 || integral.inside(sw, sh, ox, oy, cw, ch) as f64 >= need {
            return Ok(finish(transformed, ox, oy));
        }
    }
    if sw > cw || sh > ch {
        return Err(Error::Placement(format!(
            "{sw}x{sh} sprite cannot keep {} of its area on a {cw}x{ch} canvas",
            policy.min_visible_frac
        )));
    }
    debug!("placement clamped after {MAX_PLACEMENT_ATTEMPTS} rejected offsets");
    Ok(finish(transformed, ox.clamp(0, cw - sw), oy.clamp(0, ch - sh)))
}

/// Paste one CDP onto a CIP at a random placement.
pub fn place_cdp<R: Rng>(
    cip: &Cip,
    cdp: &Cdp,
    policy: &CombinerPolicy,
    rng: &mut R,
) -> Result<(Raster, f64, Placement)> {
    let (layer, placement) = draw_placement(cip.pixels.width(), cip.pixels.height(), &cdp.sprite, policy, rng)?;
    let (image, areas) = composite_layers(&cip.pixels, std::slice::from_ref(&layer))?;
    Ok((image, areas[0], placement))
}

/// Paste `a` and then `b` over it. Areas are occlusion-aware: the part of
/// `a` hidden under `b` does not count toward `a`.
pub fn mix_two_cdps<R: Rng>(
    cip: &Cip,
    a: &Cdp,
    b: &Cdp,
    policy: &CombinerPolicy,
    rng: &mut R,
) -> Result<(Raster, [f64; 2], [Placement; 2])> {
    if a.class_id == b.class_id {
        return Err(Error::InvalidInput(format!("mixed CDPs {} and {} share class {}", a.id, b.id, a.class_id)));
    }
    let (w, h) = (cip.pixels.width(), cip.pixels.height());
    let (la, pa) = draw_placement(w, h, &a.sprite, policy, rng)?;
    let (lb, pb) = draw_placement(w, h, &b.sprite, policy, rng)?;
    let (image, areas) = composite_layers(&cip.pixels, &[la, lb])?;
    Ok((image, [areas[0], areas[1]], [pa, pb]))
}

fn placed(cdp: &Cdp, placement: Placement, visible_area: f64) -> PlacedCdp {
    PlacedCdp { id: cdp.id.clone(), class_id: cdp.class_id, kind: cdp.kind, placement, visible_area }
}

fn label_for(cdps: &[PlacedCdp]) -> Result<LabelVector> {
    let masses: Vec<(ClassId, f64)> = cdps.iter().map(|c| (c.class_id, c.visible_area)).collect();
    LabelVector::from_masses(&masses)
}

/// Compose a CDP of `class_hint` (and, with probability `p_mix`, one of
/// another class) onto a CIP. The label is proportional to visible area.
pub fn make_augmented_sample<R: Rng>(
    bank: &Bank,
    class_hint: ClassId,
    policy: &CombinerPolicy,
    rng: &mut R,
) -> Result<AugmentedSample> {
    policy.validate()?;
    let others: Vec<ClassId> = bank.class_ids().filter(|&c| c != class_hint).collect();
    for attempt in 0..MAX_SAMPLE_RETRIES {
        let a = bank.sample_cdp(class_hint, policy.p_syn, rng)?;
        let cip = bank.sample_cip(class_hint, policy.strict_inter_class_cip, rng)?;
        let mix = rng.random_bool(policy.p_mix) && !others.is_empty();
        let (image, cdps) = if mix {
            let other = others[rng.random_range(0..others.len())];
            let b = bank.sample_cdp(other, policy.p_syn, rng)?;
            let (image, areas, [pa, pb]) = mix_two_cdps(cip, a, b, policy, rng)?;
            (image, vec![placed(a, pa, areas[0]), placed(b, pb, areas[1])])
        } else {
            let (image, area, p) = place_cdp(cip, a, policy, rng)?;
            (image, vec![placed(a, p, area)])
        };
        if cdps.iter().all(|c| c.visible_area <= 0.0) {
            debug!("sample attempt {attempt} has no visible foreground, redrawing");
            continue;
        }
        let label = label_for(&cdps)?;
        let provenance = Provenance { cip_id: Some(cip.id.clone()), cdps, ..Provenance::default() };
        return Ok(AugmentedSample { image, label, provenance });
    }
    Err(Error::RetryExhausted(MAX_SAMPLE_RETRIES))
}

/// A real training item: its image, class and an identifier for provenance.
#[derive(Debug, Clone, Copy)]
pub struct RealItem<'a> {
    pub id: &'a str,
    pub image: &'a Raster,
    pub class_id: ClassId,
}

/// Keep the real item with probability `1 − p_aug`, otherwise replace it with
/// an augmented sample of the same class.
pub fn next_training_sample<R: Rng>(
    item: RealItem<'_>,
    bank: &Bank,
    policy: &CombinerPolicy,
    rng: &mut R,
) -> Result<AugmentedSample> {
    if rng.random_bool(policy.p_aug) {
        make_augmented_sample(bank, item.class_id, policy, rng)
    } else {
        Ok(AugmentedSample {
            image: item.image.clone(),
            label: LabelVector::one_hot(item.class_id),
            provenance: Provenance { real_item: Some(item.id.to_string()), ..Provenance::default() },
        })
    }
}

/// Rebuild an augmented sample from its provenance alone.
pub fn replay(bank: &Bank, provenance: &Provenance) -> Result<(Raster, LabelVector)> {
    let cip_id = provenance
        .cip_id
        .as_deref()
        .ok_or_else(|| Error::InvalidInput("provenance names no CIP; it is a real item".into()))?;
    let cip = bank.cip(cip_id).ok_or_else(|| Error::Integrity(format!("unknown CIP {cip_id}")))?;
    let mut layers = Vec::with_capacity(provenance.cdps.len());
    for p in &provenance.cdps {
        let cdp = bank.cdp(&p.id).ok_or_else(|| Error::Integrity(format!("unknown CDP {}", p.id)))?;
        layers.push(Layer::new(&cdp.sprite, &p.placement)?);
    }
    let (image, areas) = composite_layers(&cip.pixels, &layers)?;
    let cdps: Vec<PlacedCdp> =
        provenance.cdps.iter().zip(areas).map(|(p, a)| PlacedCdp { visible_area: a, ..p.clone() }).collect();
    Ok((image, label_for(&cdps)?))
}

/// Rng for item `index` of a batch: one ChaCha stream per item, so output
/// does not depend on how items are spread over workers.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Where batch items come from.
#[derive(Debug, Clone, Copy)]
pub enum BatchSource<'a> {
    /// Augmented samples only; the class of each is drawn uniformly.
    Bank,
    /// Walk the real items in order, replacing each with probability `p_aug`.
    RealItems(&'a [(String, Raster, ClassId)]),
}

/// Generate sample `index` of a seeded batch.
pub fn batch_item(
    bank: &Bank,
    source: BatchSource<'_>,
    policy: &CombinerPolicy,
    seed: u64,
    index: u64,
) -> Result<AugmentedSample> {
    let mut rng = item_rng(seed, index);
    let mut sample = match source {
        BatchSource::Bank => {
            let classes: Vec<ClassId> = bank.class_ids().collect();
            let class = classes[rng.random_range(0..classes.len())];
            make_augmented_sample(bank, class, policy, &mut rng)?
        }
        BatchSource::RealItems(items) => {
            if items.is_empty() {
                return Err(Error::InvalidInput("no real items to draw from".into()));
            }
            let (id, image, class_id) = &items[index as usize % items.len()];
            next_training_sample(RealItem { id, image, class_id: *class_id }, bank, policy, &mut rng)?
        }
    };
    sample.provenance.seed = Some(seed);
    sample.provenance.stream = Some(index);
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub class: ClassId,
    pub weight: f64,
}

/// One line of `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub file: String,
    pub labels: Vec<LabelEntry>,
    pub provenance: Provenance,
}

pub const LABELS_FILE: &str = "labels.jsonl";

/// Write `count` samples as `<n>.png` plus `labels.jsonl` into `out`.
/// Output is identical for any number of workers.
pub fn emit_batch(
    bank: &Bank,
    source: BatchSource<'_>,
    policy: &CombinerPolicy,
    seed: u64,
    count: usize,
    workers: usize,
    out: &Path,
) -> Result<Vec<LabelRecord>> {
    policy.validate()?;
    bank.verify()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let records = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|n| {
                let sample = batch_item(bank, source, policy, seed, n as u64)?;
                let file = format!("{n}.png");
                save_raster(&sample.image, &out.join(&file))?;
                let labels = sample.label.iter().map(|(class, weight)| LabelEntry { class, weight }).collect();
                Ok(LabelRecord { file, labels, provenance: sample.provenance })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let path = out.join(LABELS_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for r in &records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(records)
}
