//! Command-line flags, the optional TOML config file, and how they combine.
//!
//! Every setting is resolved as flag, then config file, then built-in
//! default. The config file uses the flag names with `-` replaced by `_`:
//! global settings at the top level and one table per command.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use deda_core::combiner::CombinerPolicy;
use deda_core::diffusion::EditConfig;
use deda_core::expand::ExpandConfig;
use log::LevelFilter;
use serde::Deserialize;

use crate::error::{io, CliError, Result};

/// Environment variable naming the default backend URL.
pub const BACKEND_ENV: &str = "DEDA_BACKEND_URL";

#[derive(Debug, Parser)]
#[command(
    name = "deda",
    version,
    about = "Decoupled data augmentation: build CDP/CIP banks and emit augmented samples"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Base seed; every command is deterministic for a fixed seed and worker count.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-item work. Output order never depends on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Bank directory.
    #[arg(long, global = true)]
    pub bank: Option<PathBuf>,

    /// One of off, error, warn, info, debug, trace.
    #[arg(long, global = true)]
    pub log_level: Option<LevelFilter>,

    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split images into class-dependent parts (CDPs) and inpainted backgrounds (CIPs).
    Decouple(DecoupleArgs),
    /// Add synthetic CDP variants to a bank through an editing backend.
    Edit(EditArgs),
    /// Emit augmented samples and labels.jsonl from a bank.
    Augment(AugmentArgs),
    /// Run a built-in experiment and write its report.
    Harness(HarnessArgs),
}

#[derive(Debug, Args)]
pub struct DecoupleArgs {
    /// Directory of input images.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Directory of foreground masks named `<image stem>.png`.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// CSV with header `image,class`.
    #[arg(long)]
    pub class_map: Option<PathBuf>,
    /// Output bank directory (defaults to --bank).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Segmentation service used when no mask directory is given.
    #[arg(long)]
    pub prompt_backend: Option<String>,
    /// Width of the inpainting blend band in pixels.
    #[arg(long)]
    pub blend_band: Option<u32>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    /// `toy` or the URL of an editing service.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub strength: Option<f64>,
    /// Target synthetic variants per real CDP.
    #[arg(long)]
    pub multiplier: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
    /// Attempts per variant before it is skipped.
    #[arg(long)]
    pub attempts: Option<usize>,
    /// Per-request timeout for a remote backend, in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub count: Option<usize>,
    /// Output directory for `<n>.png` and labels.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub p_aug: Option<f64>,
    #[arg(long)]
    pub p_syn: Option<f64>,
    #[arg(long)]
    pub p_mix: Option<f64>,
    #[arg(long)]
    pub scale_min: Option<f64>,
    #[arg(long)]
    pub scale_max: Option<f64>,
    #[arg(long)]
    pub min_visible_frac: Option<f64>,
    #[arg(long)]
    pub hflip_prob: Option<f64>,
    /// Allow pairing a CDP with a background from its own class.
    #[arg(long)]
    pub allow_same_class_cip: bool,
    /// Real training images to interleave; requires --class-map.
    #[arg(long, requires = "class_map")]
    pub images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    pub class_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Robustness,
    Diversity,
}

#[derive(Debug, Args)]
pub struct HarnessArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of seeds, starting at --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Report path; a JSONL copy is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Share of training images whose background matches their class.
    #[arg(long)]
    pub rho: Option<f64>,
    /// CDPs edited per strength in the diversity preset.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub bank: Option<PathBuf>,
    pub log_level: Option<String>,
    #[serde(default)]
    pub decouple: DecoupleFile,
    #[serde(default)]
    pub edit: EditFile,
    #[serde(default)]
    pub augment: AugmentFile,
    #[serde(default)]
    pub harness: HarnessFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoupleFile {
    pub images: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub class_map: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub prompt_backend: Option<String>,
    pub blend_band: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditFile {
    pub backend: Option<String>,
    pub strength: Option<f64>,
    pub multiplier: Option<usize>,
    pub guidance: Option<f64>,
    pub attempts: Option<usize>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentFile {
    pub count: Option<usize>,
    pub out: Option<PathBuf>,
    pub p_aug: Option<f64>,
    pub p_syn: Option<f64>,
    pub p_mix: Option<f64>,
    pub scale_min: Option<f64>,
    pub scale_max: Option<f64>,
    pub min_visible_frac: Option<f64>,
    pub hflip_prob: Option<f64>,
    pub allow_same_class_cip: Option<bool>,
    pub images: Option<PathBuf>,
    pub class_map: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessFile {
    pub preset: Option<Preset>,
    pub seeds: Option<usize>,
    pub out: Option<PathBuf>,
    pub rho: Option<f64>,
    pub n: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| CliError::ConfigParse { path: path.to_path_buf(), source })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Toy,
    Http(String),
}

impl BackendChoice {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "toy" {
            Ok(Self::Toy)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Self::Http(s.to_string()))
        } else {
            Err(CliError::Config(format!("backend must be `toy` or an http(s) URL, got {s:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoupleOpts {
    pub images: PathBuf,
    pub masks: Option<PathBuf>,
    pub class_map: PathBuf,
    pub out: PathBuf,
    pub prompt_backend: Option<String>,
    pub blend_band: u32,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOpts {
    pub bank: PathBuf,
    pub backend: BackendChoice,
    pub expand: ExpandConfig,
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOpts {
    pub bank: PathBuf,
    pub count: usize,
    pub out: PathBuf,
    pub policy: CombinerPolicy,
    pub seed: u64,
    pub workers: usize,
    pub real_items: Option<(PathBuf, PathBuf)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessOpts {
    pub preset: Preset,
    pub seeds: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub rho: f64,
    pub n: usize,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resolved {
    Decouple(DecoupleOpts),
    Edit(EditOpts),
    Augment(AugmentOpts),
    Harness(HarnessOpts),
}

fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| CliError::Config(format!("--{name} is required (flag or config file)")))
}

/// Log level after applying flag and config precedence.
pub fn log_level(cli: &Cli, file: &FileConfig) -> Result<LevelFilter> {
    match (cli.global.log_level, &file.log_level) {
        (Some(l), _) => Ok(l),
        (None, Some(s)) => s.parse().map_err(|_| CliError::Config(format!("unknown log level {s:?}"))),
        (None, None) => Ok(LevelFilter::Info),
    }
}

/// Merge flags over the config file over defaults. `env_backend` is the
/// value of [`BACKEND_ENV`], used when neither flags nor file name a backend.
pub fn resolve(cli: &Cli, file: &FileConfig, env_backend: Option<&str>) -> Result<Resolved> {
    let g = &cli.global;
    let seed = g.seed.or(file.seed).unwrap_or(0);
    let workers = g.workers.or(file.workers).unwrap_or(1);
    if workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let bank = g.bank.clone().or_else(|| file.bank.clone());
    let resolved = match &cli.command {
        Command::Decouple(a) => {
            let f = &file.decouple;
            let masks = a.masks.clone().or_else(|| f.masks.clone());
            let prompt_backend = a.prompt_backend.clone().or_else(|| f.prompt_backend.clone()).or_else(|| {
                if masks.is_none() {
                    env_backend.map(str::to_string)
                } else {
                    None
                }
            });
            if masks.is_none() && prompt_backend.is_none() {
                return Err(CliError::Config(format!(
                    "give --masks or a segmentation backend (--prompt-backend or {BACKEND_ENV})"
                )));
            }
            if let Some(url) = &prompt_backend {
                if BackendChoice::parse(url)? == BackendChoice::Toy {
                    return Err(CliError::Config("the toy backend cannot segment; give --masks".into()));
                }
            }
            Resolved::Decouple(DecoupleOpts {
                images: required(a.images.clone().or_else(|| f.images.clone()), "images")?,
                masks,
                class_map: required(a.class_map.clone().or_else(|| f.class_map.clone()), "class-map")?,
                out: required(a.out.clone().or_else(|| f.out.clone()).or(bank), "out")?,
                prompt_backend,
                blend_band: a.blend_band.or(f.blend_band).unwrap_or(4),
                seed,
                workers,
            })
        }
        Command::Edit(a) => {
            let f = &file.edit;
            let backend = a.backend.clone().or_else(|| f.backend.clone()).or_else(|| env_backend.map(str::to_string));
            let defaults = ExpandConfig::default();
            let expand = ExpandConfig {
                multiplier: a.multiplier.or(f.multiplier).unwrap_or(defaults.multiplier),
                strength: a.strength.or(f.strength).unwrap_or(defaults.strength),
                guidance: a.guidance.or(f.guidance).unwrap_or(defaults.guidance),
                seed,
                attempts: a.attempts.or(f.attempts).unwrap_or(defaults.attempts),
            };
            EditConfig { strength: expand.strength, guidance: expand.guidance, seed }.validate()?;
            Resolved::Edit(EditOpts {
                bank: required(bank, "bank")?,
                backend: BackendChoice::parse(backend.as_deref().unwrap_or("toy"))?,
                expand,
                timeout_secs: a.timeout_secs.or(f.timeout_secs).unwrap_or(600),
            })
        }
        Command::Augment(a) => {
            let f = &file.augment;
            let d = CombinerPolicy::default();
            let policy = CombinerPolicy {
                p_aug: a.p_aug.or(f.p_aug).unwrap_or(d.p_aug),
                p_syn: a.p_syn.or(f.p_syn).unwrap_or(d.p_syn),
                p_mix: a.p_mix.or(f.p_mix).unwrap_or(d.p_mix),
                scale_range: [
                    a.scale_min.or(f.scale_min).unwrap_or(d.scale_range[0]),
                    a.scale_max.or(f.scale_max).unwrap_or(d.scale_range[1]),
                ],
                min_visible_frac: a.min_visible_frac.or(f.min_visible_frac).unwrap_or(d.min_visible_frac),
                hflip_prob: a.hflip_prob.or(f.hflip_prob).unwrap_or(d.hflip_prob),
                strict_inter_class_cip: !(a.allow_same_class_cip || f.allow_same_class_cip.unwrap_or(false)),
            };
            policy.validate()?;
            let images = a.images.clone().or_else(|| f.images.clone());
            let class_map = a.class_map.clone().or_else(|| f.class_map.clone());
            let real_items = match (images, class_map) {
                (Some(i), Some(c)) => Some((i, c)),
                (None, None) => None,
                _ => return Err(CliError::Config("--images and --class-map must be given together".into())),
            };
            Resolved::Augment(AugmentOpts {
                bank: required(bank, "bank")?,
                count: required(a.count.or(f.count), "count")?,
                out: required(a.out.clone().or_else(|| f.out.clone()), "out")?,
                policy,
                seed,
                workers,
                real_items,
            })
        }
        Command::Harness(a) => {
            let f = &file.harness;
            let seeds = a.seeds.or(f.seeds).unwrap_or(5);
            if seeds == 0 {
                return Err(CliError::Config("--seeds must be at least 1".into()));
            }
            let rho = a.rho.or(f.rho).unwrap_or(1.0);
            if !(0.0..=1.0).contains(&rho) {
                return Err(CliError::Config(format!("--rho {rho} outside [0, 1]")));
            }
            Resolved::Harness(HarnessOpts {
                preset: required(a.preset.or(f.preset), "preset")?,
                seeds,
                seed,
                out: required(a.out.clone().or_else(|| f.out.clone()), "out")?,
                rho,
                n: a.n.or(f.n).unwrap_or(20),
                workers,
            })
        }
    };
    Ok(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("deda").chain(args.iter().copied())).unwrap()
    }

    fn file(text: &str) -> FileConfig {
        FileConfig::parse(text, Path::new("test.toml")).unwrap()
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let f = file("seed = 7\nbank = \"from-file\"\n[edit]\nstrength = 0.2\nmultiplier = 5\n");
        let Resolved::Edit(e) = resolve(&cli(&["edit", "--multiplier", "2"]), &f, None).unwrap() else { panic!() };
        assert_eq!(e.expand.multiplier, 2);
        assert_eq!(e.expand.strength, 0.2);
        assert_eq!(e.expand.seed, 7);
        assert_eq!(e.expand.guidance, EditConfig::DEFAULT_GUIDANCE);
        assert_eq!(e.bank, PathBuf::from("from-file"));
        assert_eq!(e.backend, BackendChoice::Toy);
        let Resolved::Edit(e) = resolve(&cli(&["--seed", "1", "edit", "--bank", "b"]), &f, None).unwrap() else {
            panic!()
        };
        assert_eq!((e.expand.seed, e.bank), (1, PathBuf::from("b")));
    }

    #[test]
    fn backend_env_is_lowest_precedence() {
        let url = Some("http://env:1");
        let Resolved::Edit(e) = resolve(&cli(&["edit", "--bank", "b"]), &FileConfig::default(), url).unwrap() else {
            panic!()
        };
        assert_eq!(e.backend, BackendChoice::Http("http://env:1".into()));
        let f = file("[edit]\nbackend = \"toy\"\n");
        let Resolved::Edit(e) = resolve(&cli(&["edit", "--bank", "b"]), &f, url).unwrap() else { panic!() };
        assert_eq!(e.backend, BackendChoice::Toy);
        assert!(resolve(&cli(&["edit", "--bank", "b", "--backend", "ftp://x"]), &f, url).is_err());
    }

    #[test]
    fn unknown_flags_and_keys_rejected() {
        assert!(Cli::try_parse_from(["deda", "augment", "--p-augg", "0.1"]).is_err());
        assert!(FileConfig::parse("[augment]\np_augg = 0.1\n", Path::new("x")).is_err());
        assert!(FileConfig::parse("sed = 1\n", Path::new("x")).is_err());
    }

    #[test]
    fn augment_policy_from_flags() {
        let c =
            cli(&["augment", "--bank", "b", "--count", "3", "--out", "o", "--p-mix", "0", "--allow-same-class-cip"]);
        let Resolved::Augment(a) = resolve(&c, &FileConfig::default(), None).unwrap() else { panic!() };
        assert_eq!(a.policy.p_mix, 0.0);
        assert_eq!(a.policy.p_aug, 0.5);
        assert!(!a.policy.strict_inter_class_cip);
        let bad = cli(&["augment", "--bank", "b", "--count", "3", "--out", "o", "--p-syn", "1.5"]);
        assert!(resolve(&bad, &FileConfig::default(), None).is_err());
    }

    #[test]
    fn missing_required_settings_are_config_errors() {
        assert!(matches!(
            resolve(&cli(&["augment", "--bank", "b", "--out", "o"]), &FileConfig::default(), None),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            resolve(
                &cli(&["decouple", "--images", "i", "--class-map", "c", "--out", "o"]),
                &FileConfig::default(),
                None
            ),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            resolve(
                &cli(&["--workers", "0", "harness", "--preset", "diversity", "--out", "r"]),
                &FileConfig::default(),
                None
            ),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn decouple_falls_back_to_bank_and_env_backend() {
        let c = cli(&["--bank", "bk", "decouple", "--images", "i", "--class-map", "c"]);
        let Resolved::Decouple(d) = resolve(&c, &FileConfig::default(), Some("http://seg:9")).unwrap() else {
            panic!()
        };
        assert_eq!(d.out, PathBuf::from("bk"));
        assert_eq!(d.prompt_backend.as_deref(), Some("http://seg:9"));
        let c = cli(&["decouple", "--images", "i", "--class-map", "c", "--out", "o", "--masks", "m"]);
        let Resolved::Decouple(d) = resolve(&c, &FileConfig::default(), Some("http://seg:9")).unwrap() else {
            panic!()
        };
        assert_eq!(d.prompt_backend, None);
    }

    #[test]
    fn harness_defaults() {
        let Resolved::Harness(h) =
            resolve(&cli(&["harness", "--preset", "robustness", "--out", "r.tsv"]), &FileConfig::default(), None)
                .unwrap()
        else {
            panic!()
        };
        assert_eq!((h.seeds, h.seed, h.rho, h.preset), (5, 0, 1.0, Preset::Robustness));
        let f = file("[harness]\npreset = \"diversity\"\nout = \"d.tsv\"\nseeds = 1\n");
        let Resolved::Harness(h) = resolve(&cli(&["harness"]), &f, None).unwrap() else { panic!() };
        assert_eq!((h.preset, h.seeds), (Preset::Diversity, 1));
    }
}
