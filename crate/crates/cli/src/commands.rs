//! The four subcommands. Each returns the process exit code on completion;
//! errors map to exit code 2.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use deda_core::bank::{Bank, ClassInfo};
use deda_core::combiner::{emit_batch, BatchSource, LABELS_FILE};
use deda_core::decouple::{aggregate_masks, extract_cdp, extract_cip, Cdp, Cip};
use deda_core::expand::{derive_seed, expand_bank, ExpandSummary, ToyEditor};
use deda_core::harness::{
    bank_from_samples, gen_shapes_dataset, run_background_robustness, run_diversity_report, DiversityPoint, Method,
    RobustnessConfig, ShapesConfig,
};
use deda_core::imagecore::{load_mask, load_rgb, ClassId, Raster};
use deda_core::inpaint::{inpaint, PyramidConfig};
use deda_core::Error;
use log::{info, warn};
use rayon::prelude::*;
use serde::Deserialize;

use crate::backend::HttpBackend;
use crate::config::{AugmentOpts, BackendChoice, DecoupleOpts, EditOpts, HarnessOpts, Preset, Resolved};
use crate::error::{io, CliError, Result, EXIT_PARTIAL};

/// Strengths swept by the diversity preset.
pub const DIVERSITY_STRENGTHS: [f64; 4] = [0.0, 0.2, 0.4, 0.8];

pub fn execute(resolved: &Resolved) -> Result<u8> {
    match resolved {
        Resolved::Decouple(o) => cmd_decouple(o),
        Resolved::Edit(o) => cmd_edit(o),
        Resolved::Augment(o) => cmd_augment(o),
        Resolved::Harness(o) => cmd_harness(o),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ClassMapRow {
    pub image: String,
    pub class: String,
}

/// Read an `image,class` CSV, sorted by image name.
pub fn read_class_map(path: &Path) -> Result<Vec<ClassMapRow>> {
    let err = |source| CliError::ClassMap { path: path.to_path_buf(), source };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(err)?;
    let mut rows = reader.deserialize().collect::<std::result::Result<Vec<ClassMapRow>, _>>().map_err(err)?;
    rows.sort_by(|a, b| a.image.cmp(&b.image));
    if let Some(w) = rows.windows(2).find(|w| w[0].image == w[1].image) {
        return Err(CliError::Config(format!("{} lists {} twice", path.display(), w[0].image)));
    }
    Ok(rows)
}

/// Class ids in order of sorted class name.
pub fn class_ids(rows: &[ClassMapRow]) -> BTreeMap<String, ClassId> {
    let names: BTreeSet<&str> = rows.iter().map(|r| r.class.as_str()).collect();
    names.into_iter().enumerate().map(|(i, n)| (n.to_string(), ClassId(i as u32))).collect()
}

/// Bank-safe id derived from an image file name.
pub fn source_id(image: &str) -> String {
    let stem = Path::new(image).file_stem().and_then(|s| s.to_str()).unwrap_or(image);
    stem.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}

enum MaskSource {
    Dir(PathBuf),
    Backend(HttpBackend),
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

fn decouple_one(
    row: &ClassMapRow,
    class: ClassId,
    index: usize,
    opts: &DecoupleOpts,
    masks: &MaskSource,
) -> Result<Option<(Cdp, Cip)>> {
    let image = load_rgb(&opts.images.join(&row.image))?;
    let sid = source_id(&row.image);
    let mask = match masks {
        MaskSource::Dir(dir) => load_mask(
            &dir.join(format!("{}.png", Path::new(&row.image).file_stem().and_then(|s| s.to_str()).unwrap_or(&sid))),
        )?,
        MaskSource::Backend(b) => match b.segment(&image, &row.class)?.as_slice() {
            [] => {
                warn!("skipping {}: segmentation found nothing", row.image);
                return Ok(None);
            }
            ms => aggregate_masks(ms)?,
        },
    };
    let extracted = extract_cdp(&image, &mask, class, &sid)
        .and_then(|(cdp, _)| Ok((cdp, extract_cip(&image, &mask, class, &sid)?)));
    match extracted {
        Ok((cdp, hole)) => {
            let pyramid = PyramidConfig { blend_band: opts.blend_band, ..PyramidConfig::default() };
            let cip = inpaint(&hole, &pyramid, derive_seed(opts.seed, index as u64, 0))?;
            Ok(Some((cdp, cip)))
        }
        Err(e @ (Error::NoForeground | Error::NoBackground)) => {
            warn!("skipping {}: {e}", row.image);
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_decouple(opts: &DecoupleOpts) -> Result<u8> {
    let rows = read_class_map(&opts.class_map)?;
    let ids = class_ids(&rows);
    let mut seen = BTreeMap::new();
    for r in &rows {
        if let Some(prev) = seen.insert(source_id(&r.image), &r.image) {
            return Err(CliError::Config(format!("{prev} and {} map to the same bank id", r.image)));
        }
    }
    let masks = match (&opts.masks, &opts.prompt_backend) {
        (Some(dir), _) => MaskSource::Dir(dir.clone()),
        (None, Some(url)) => {
            let b = HttpBackend::new(url, Duration::from_secs(600));
            b.healthz()?;
            MaskSource::Backend(b)
        }
        (None, None) => return Err(CliError::Config("no mask source".into())),
    };
    let results = worker_pool(opts.workers)?.install(|| {
        rows.par_iter()
            .enumerate()
            .map(|(i, r)| decouple_one(r, ids[&r.class], i, opts, &masks))
            .collect::<Result<Vec<_>>>()
    })?;
    let pairs: Vec<(Cdp, Cip)> = results.into_iter().flatten().collect();
    if pairs.is_empty() {
        return Err(CliError::Config("no image produced a CDP; bank would be empty".into()));
    }
    let used: BTreeSet<ClassId> = pairs.iter().map(|(c, _)| c.class_id).collect();
    for (name, id) in &ids {
        if !used.contains(id) {
            warn!("class {name} has no usable image and is left out of the bank");
        }
    }
    let classes =
        ids.iter().filter(|(_, id)| used.contains(id)).map(|(n, &id)| ClassInfo { id, name: n.clone() }).collect();
    let mut bank = Bank::new(classes)?;
    for (cdp, cip) in pairs {
        bank.add_real(cdp)?;
        bank.add_cip(cip)?;
    }
    bank.save(&opts.out)?;
    let stats = bank.stats();
    println!(
        "decoupled {} of {} images into {} (C={}, M={})",
        bank.cdps().len(),
        rows.len(),
        opts.out.display(),
        stats.c,
        stats.m
    );
    Ok(0)
}

fn report_expand(summary: &ExpandSummary, bank: &Bank) -> u8 {
    let stats = bank.stats();
    println!("added {} synthetic CDPs; bank now has K={} ({} CDPs)", summary.added, stats.k, bank.cdps().len());
    if summary.skipped.is_empty() {
        return 0;
    }
    for (real, j) in &summary.skipped {
        warn!("skipped variant {j} of {real}");
    }
    warn!("{} variants skipped; rerun to retry them", summary.skipped.len());
    EXIT_PARTIAL
}

pub fn cmd_edit(opts: &EditOpts) -> Result<u8> {
    let mut bank = Bank::load(&opts.bank)?;
    let summary = match &opts.backend {
        BackendChoice::Toy => expand_bank(&mut bank, &ToyEditor::default(), &opts.expand, Some(&opts.bank))?,
        BackendChoice::Http(url) => {
            let backend = HttpBackend::new(url, Duration::from_secs(opts.timeout_secs));
            if opts.expand.multiplier > 0 {
                let health = backend.healthz()?;
                info!("backend {url} is up: {}", health.model_versions);
            }
            expand_bank(&mut bank, &backend, &opts.expand, Some(&opts.bank))?
        }
    };
    Ok(report_expand(&summary, &bank))
}

/// Load `(id, image, class)` triples for every row of a class map, using the
/// bank's class names.
fn load_real_items(bank: &Bank, images: &Path, class_map: &Path) -> Result<Vec<(String, Raster, ClassId)>> {
    let by_name: BTreeMap<&str, ClassId> = bank.classes().iter().map(|c| (c.name.as_str(), c.id)).collect();
    read_class_map(class_map)?
        .iter()
        .map(|r| {
            let class = *by_name
                .get(r.class.as_str())
                .ok_or_else(|| CliError::Config(format!("class {:?} of {} is not in the bank", r.class, r.image)))?;
            Ok((source_id(&r.image), load_rgb(&images.join(&r.image))?, class))
        })
        .collect()
}

pub fn cmd_augment(opts: &AugmentOpts) -> Result<u8> {
    let bank = Bank::load(&opts.bank)?;
    let items = match &opts.real_items {
        Some((images, map)) => Some(load_real_items(&bank, images, map)?),
        None => None,
    };
    let source = match &items {
        Some(items) => BatchSource::RealItems(items),
        None => BatchSource::Bank,
    };
    let start = Instant::now();
    let records = emit_batch(&bank, source, &opts.policy, opts.seed, opts.count, opts.workers, &opts.out)?;
    let augmented = records.iter().filter(|r| r.provenance.cip_id.is_some()).count();
    println!(
        "wrote {} samples ({augmented} augmented) and {} to {} in {:.1}s",
        records.len(),
        LABELS_FILE,
        opts.out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(0)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io(path, e))
}

/// TSV rendering of a diversity sweep.
pub fn diversity_tsv(points: &[DiversityPoint]) -> String {
    let mut out = String::from("strength\tmean_psnr\tcount\n");
    for p in points {
        out.push_str(&format!("{:.2}\t{:.4}\t{}\n", p.strength, p.mean_psnr, p.count));
    }
    out
}

/// Robustness experiment configuration used by the `robustness` preset.
pub fn robustness_config(opts: &HarnessOpts) -> RobustnessConfig {
    let base = RobustnessConfig::default();
    RobustnessConfig {
        shapes: ShapesConfig { rho: opts.rho, ..base.shapes },
        seeds: (opts.seed..opts.seed + opts.seeds as u64).collect(),
        workers: opts.workers,
        ..base
    }
}

pub fn cmd_harness(opts: &HarnessOpts) -> Result<u8> {
    let start = Instant::now();
    let jsonl_path = opts.out.with_extension("jsonl");
    match opts.preset {
        Preset::Robustness => {
            let report = run_background_robustness(&robustness_config(opts), &ToyEditor::default())?;
            let tsv = report.to_tsv();
            write_file(&opts.out, &tsv)?;
            write_file(&jsonl_path, &report.to_jsonl()?)?;
            print!("{tsv}");
            for m in Method::ALL {
                if let Some(r) = report.mean(m) {
                    println!(
                        "{:>7}: id {:.3}  swapped {:.3}  gap {:+.3}",
                        m.name(),
                        r.id_accuracy,
                        r.swapped_accuracy,
                        r.gap()
                    );
                }
            }
        }
        Preset::Diversity => {
            let shapes = ShapesConfig { seed: opts.seed, ..ShapesConfig::default() };
            let data = gen_shapes_dataset(&shapes)?;
            let bank = bank_from_samples(&data.train, shapes.classes, opts.seed)?;
            let points = run_diversity_report(&bank, &ToyEditor::default(), &DIVERSITY_STRENGTHS, opts.n, opts.seed)?;
            let tsv = diversity_tsv(&points);
            write_file(&opts.out, &tsv)?;
            let jsonl: Vec<String> =
                points.iter().map(serde_json::to_string).collect::<std::result::Result<_, _>>().map_err(Error::from)?;
            write_file(&jsonl_path, &(jsonl.join("\n") + if jsonl.is_empty() { "" } else { "\n" }))?;
            print!("{tsv}");
            if !points.windows(2).all(|w| w[1].mean_psnr < w[0].mean_psnr) {
                warn!("mean PSNR is not strictly decreasing in strength");
            }
        }
    }
    println!(
        "report written to {} and {} in {:.1}s",
        opts.out.display(),
        jsonl_path.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(0)
}
