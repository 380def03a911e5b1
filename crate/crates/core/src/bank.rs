//! On-disk store of CDPs (real and synthetic) and hole-free CIPs.
//!
//! Layout: `manifest.json`, `cdp/<id>.png` (RGBA) and `cip/<id>.png` (RGB).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decouple::{Cdp, CdpKind, Cip};
use crate::error::{Error, Result};
use crate::imagecore::{alpha_area, load_raster, save_raster, ClassId};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: ClassId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdpRecord {
    pub id: String,
    pub class_id: ClassId,
    pub kind: CdpKind,
    pub parent_id: Option<String>,
    pub path: String,
    pub alpha_area: f64,
    pub strength_used: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipRecord {
    pub id: String,
    pub source_class: ClassId,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankStats {
    /// Number of classes.
    #[serde(rename = "C")]
    pub c: usize,
    /// Fewest real CDPs in any class.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "M_per_class")]
    pub m_per_class: BTreeMap<ClassId, usize>,
    /// Fewest synthetic variants attached to any real CDP.
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub version: u32,
    pub classes: Vec<ClassInfo>,
    pub cdp_records: Vec<CdpRecord>,
    pub cip_records: Vec<CipRecord>,
    pub stats: BankStats,
}

/// Distinct (CDP variant, CIP) pairs reachable from one real CDP and its
/// synthetic variants: `(1 + K)·C·M`.
pub fn combinations_per_cdp_family(stats: &BankStats) -> usize {
    (1 + stats.k) * stats.c * stats.m
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("record id {id:?} is not a safe file name")))
    }
}

fn cdp_path(id: &str) -> String {
    format!("cdp/{id}.png")
}

fn cip_path(id: &str) -> String {
    format!("cip/{id}.png")
}

/// In-memory bank: class table plus decoded CDPs and CIPs.
#[derive(Debug, Clone, Default)]
pub struct Bank {
    classes: Vec<ClassInfo>,
    cdps: Vec<Cdp>,
    cips: Vec<Cip>,
    cdp_index: HashMap<String, usize>,
    cip_index: HashMap<String, usize>,
    real_by_class: BTreeMap<ClassId, Vec<usize>>,
    syn_by_class: BTreeMap<ClassId, Vec<usize>>,
}

impl Bank {
    pub fn new(classes: Vec<ClassInfo>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidInput("a bank needs at least one class".into()));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if !seen.insert(c.id) {
                return Err(Error::Integrity(format!("class {} declared twice", c.id)));
            }
        }
        Ok(Self { classes, ..Self::default() })
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes.iter().map(|c| c.id)
    }

    pub fn has_class(&self, class: ClassId) -> bool {
        self.classes.iter().any(|c| c.id == class)
    }

    pub fn cdps(&self) -> &[Cdp] {
        &self.cdps
    }

    pub fn cips(&self) -> &[Cip] {
        &self.cips
    }

    pub fn cdp(&self, id: &str) -> Option<&Cdp> {
        self.cdp_index.get(id).map(|&i| &self.cdps[i])
    }

    pub fn cip(&self, id: &str) -> Option<&Cip> {
        self.cip_index.get(id).map(|&i| &self.cips[i])
    }

    pub fn real_cdps(&self, class: ClassId) -> impl Iterator<Item = &Cdp> {
        self.real_by_class.get(&class).into_iter().flatten().map(|&i| &self.cdps[i])
    }

    pub fn synthetic_cdps(&self, class: ClassId) -> impl Iterator<Item = &Cdp> {
        self.syn_by_class.get(&class).into_iter().flatten().map(|&i| &self.cdps[i])
    }

    /// Synthetic variants whose parent is `real_id`.
    pub fn variants_of<'a>(&'a self, real_id: &'a str) -> impl Iterator<Item = &'a Cdp> + 'a {
        self.cdps.iter().filter(move |c| c.parent_id.as_deref() == Some(real_id))
    }

    fn check_class(&self, class: ClassId) -> Result<()> {
        if self.has_class(class) {
            Ok(())
        } else {
            Err(Error::UnknownClass(class.0))
        }
    }

    fn check_new_cdp(&self, cdp: &Cdp) -> Result<()> {
        check_id(&cdp.id)?;
        self.check_class(cdp.class_id)?;
        if self.cdp_index.contains_key(&cdp.id) {
            return Err(Error::Integrity(format!("duplicate CDP id {}", cdp.id)));
        }
        cdp.sprite.expect_channels(4)?;
        if cdp.alpha_area.is_nan() || cdp.alpha_area <= 0.0 {
            return Err(Error::Integrity(format!("CDP {} has no visible pixels", cdp.id)));
        }
        Ok(())
    }

    fn push_cdp(&mut self, cdp: Cdp) {
        let i = self.cdps.len();
        let by_class = match cdp.kind {
            CdpKind::Real => &mut self.real_by_class,
            CdpKind::Synthetic => &mut self.syn_by_class,
        };
        by_class.entry(cdp.class_id).or_default().push(i);
        self.cdp_index.insert(cdp.id.clone(), i);
        self.cdps.push(cdp);
    }

    pub fn add_real(&mut self, cdp: Cdp) -> Result<()> {
        if cdp.kind != CdpKind::Real || cdp.parent_id.is_some() {
            return Err(Error::Integrity(format!("CDP {} is not a real CDP", cdp.id)));
        }
        self.check_new_cdp(&cdp)?;
        self.push_cdp(cdp);
        Ok(())
    }

    /// Attach a synthetic CDP; its parent must be a real CDP of the same class.
    pub fn append_synthetic(&mut self, cdp: Cdp) -> Result<()> {
        if cdp.kind != CdpKind::Synthetic {
            return Err(Error::Integrity(format!("CDP {} is not synthetic", cdp.id)));
        }
        let parent_id = cdp
            .parent_id
            .as_deref()
            .ok_or_else(|| Error::Integrity(format!("synthetic CDP {} has no parent", cdp.id)))?;
        let parent = self
            .cdp(parent_id)
            .ok_or_else(|| Error::Integrity(format!("synthetic CDP {} has dangling parent {parent_id}", cdp.id)))?;
        if parent.kind != CdpKind::Real {
            return Err(Error::Integrity(format!("parent {parent_id} of {} is not real", cdp.id)));
        }
        if parent.class_id != cdp.class_id {
            return Err(Error::Integrity(format!(
                "synthetic CDP {} has class {} but parent {parent_id} has class {}",
                cdp.id, cdp.class_id, parent.class_id
            )));
        }
        self.check_new_cdp(&cdp)?;
        self.push_cdp(cdp);
        Ok(())
    }

    pub fn add_cip(&mut self, cip: Cip) -> Result<()> {
        check_id(&cip.id)?;
        self.check_class(cip.source_class)?;
        if self.cip_index.contains_key(&cip.id) {
            return Err(Error::Integrity(format!("duplicate CIP id {}", cip.id)));
        }
        cip.pixels.expect_channels(3)?;
        self.cip_index.insert(cip.id.clone(), self.cips.len());
        self.cips.push(cip);
        Ok(())
    }

    pub fn stats(&self) -> BankStats {
        let m_per_class: BTreeMap<ClassId, usize> =
            self.classes.iter().map(|c| (c.id, self.real_by_class.get(&c.id).map_or(0, Vec::len))).collect();
        let mut variants: HashMap<&str, usize> = HashMap::new();
        for c in &self.cdps {
            match (&c.kind, &c.parent_id) {
                (CdpKind::Real, _) => {
                    variants.entry(c.id.as_str()).or_insert(0);
                }
                (CdpKind::Synthetic, Some(p)) => *variants.entry(p.as_str()).or_insert(0) += 1,
                (CdpKind::Synthetic, None) => {}
            }
        }
        BankStats {
            c: self.classes.len(),
            m: m_per_class.values().copied().min().unwrap_or(0),
            m_per_class,
            k: variants.values().copied().min().unwrap_or(0),
        }
    }

    pub fn manifest(&self) -> BankManifest {
        BankManifest {
            version: MANIFEST_VERSION,
            classes: self.classes.clone(),
            cdp_records: self
                .cdps
                .iter()
                .map(|c| CdpRecord {
                    id: c.id.clone(),
                    class_id: c.class_id,
                    kind: c.kind,
                    parent_id: c.parent_id.clone(),
                    path: cdp_path(&c.id),
                    alpha_area: c.alpha_area,
                    strength_used: c.strength_used,
                })
                .collect(),
            cip_records: self
                .cips
                .iter()
                .map(|c| CipRecord { id: c.id.clone(), source_class: c.source_class, path: cip_path(&c.id) })
                .collect(),
            stats: self.stats(),
        }
    }

    /// Check every manifest invariant that can be checked in memory.
    pub fn verify(&self) -> Result<()> {
        for c in &self.classes {
            if self.real_by_class.get(&c.id).is_none_or(Vec::is_empty) {
                return Err(Error::EmptyClass(c.id.0));
            }
        }
        for cdp in &self.cdps {
            if (alpha_area(&cdp.sprite)? - cdp.alpha_area).abs() > 1e-6 {
                return Err(Error::Integrity(format!("CDP {} alpha area does not match its sprite", cdp.id)));
            }
            if cdp.kind == CdpKind::Synthetic {
                let parent = cdp.parent_id.as_deref().and_then(|p| self.cdp(p));
                match parent {
                    Some(p) if p.kind == CdpKind::Real && p.class_id == cdp.class_id => {}
                    _ => {
                        return Err(Error::Integrity(format!(
                            "synthetic CDP {} does not resolve to a real CDP of class {}",
                            cdp.id, cdp.class_id
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Draw a CDP of `class`: synthetic with probability `p_syn`, otherwise
    /// real. A class without synthetic CDPs always yields a real one.
    pub fn sample_cdp<R: Rng>(&self, class: ClassId, p_syn: f64, rng: &mut R) -> Result<&Cdp> {
        self.check_class(class)?;
        let real = self.real_by_class.get(&class).filter(|v| !v.is_empty()).ok_or(Error::EmptyClass(class.0))?;
        let want_syn = rng.random_bool(p_syn);
        let pool = match self.syn_by_class.get(&class).filter(|v| !v.is_empty()) {
            Some(syn) if want_syn => syn,
            None if want_syn => {
                debug!("class {class} has no synthetic CDPs, using a real one");
                real
            }
            _ => real,
        };
        Ok(&self.cdps[pool[rng.random_range(0..pool.len())]])
    }

    /// Draw a CIP uniformly. In strict mode CIPs from `exclude` are never
    /// drawn.
    pub fn sample_cip<R: Rng>(&self, exclude: ClassId, strict: bool, rng: &mut R) -> Result<&Cip> {
        let eligible: Vec<&Cip> = self.cips.iter().filter(|c| !strict || c.source_class != exclude).collect();
        if eligible.is_empty() {
            return Err(Error::NoEligibleCip(if strict {
                format!("every CIP comes from class {exclude}")
            } else {
                "bank has no CIPs".into()
            }));
        }
        Ok(eligible[rng.random_range(0..eligible.len())])
    }

    /// All (CDP variant id, CIP id) pairs for the family of `real_id`.
    pub fn family_pairs(&self, real_id: &str, strict: bool) -> Result<Vec<(String, String)>> {
        let real = self
            .cdp(real_id)
            .filter(|c| c.kind == CdpKind::Real)
            .ok_or_else(|| Error::Integrity(format!("no real CDP {real_id}")))?;
        let family: Vec<&Cdp> = std::iter::once(real).chain(self.variants_of(real_id)).collect();
        let mut pairs = Vec::new();
        for cdp in family {
            for cip in self.cips.iter().filter(|c| !strict || c.source_class != real.class_id) {
                pairs.push((cdp.id.clone(), cip.id.clone()));
            }
        }
        Ok(pairs)
    }

    /// Write every image and then the manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("cdp")).map_err(|e| Error::io(dir.join("cdp"), e))?;
        fs::create_dir_all(dir.join("cip")).map_err(|e| Error::io(dir.join("cip"), e))?;
        for c in &self.cdps {
            save_raster(&c.sprite, &dir.join(cdp_path(&c.id)))?;
        }
        for c in &self.cips {
            save_raster(&c.pixels, &dir.join(cip_path(&c.id)))?;
        }
        self.write_manifest(dir)?;
        info!("saved bank to {} ({} CDPs, {} CIPs)", dir.display(), self.cdps.len(), self.cips.len());
        Ok(())
    }

    /// Append a synthetic CDP to a bank already saved in `dir`: the sprite is
    /// written first, then the manifest is replaced atomically.
    pub fn append_synthetic_persisted(&mut self, dir: &Path, cdp: Cdp) -> Result<()> {
        let path = dir.join(cdp_path(&cdp.id));
        self.append_synthetic(cdp)?;
        let cdp = self.cdps.last().expect("just appended");
        save_raster(&cdp.sprite, &path)?;
        self.write_manifest(dir)
    }

    fn write_manifest(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest())?;
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let dst = dir.join(MANIFEST_FILE);
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(json.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
    }

    pub fn read_manifest(dir: &Path) -> Result<BankManifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: BankManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Integrity(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                manifest.version
            )));
        }
        Ok(manifest)
    }

    /// Load and verify a bank. Real CDPs take their own id as source id;
    /// synthetic ones inherit their parent's.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Self::read_manifest(dir)?;
        let mut bank = Bank::new(manifest.classes.clone())?;
        let (real, syn): (Vec<_>, Vec<_>) = manifest.cdp_records.iter().partition(|r| r.kind == CdpKind::Real);
        for rec in real.into_iter().chain(syn) {
            let sprite = load_raster(&dir.join(&rec.path))?;
            if !sprite.is_rgba() {
                return Err(Error::Integrity(format!("CDP {} image has no alpha channel", rec.id)));
            }
            let area = alpha_area(&sprite)?;
            if (area - rec.alpha_area).abs() > 1e-6 {
                return Err(Error::Integrity(format!(
                    "CDP {} alpha area {} disagrees with its image ({area})",
                    rec.id, rec.alpha_area
                )));
            }
            let source_id = match &rec.parent_id {
                Some(p) => bank.cdp(p).map_or_else(|| p.clone(), |c| c.source_id.clone()),
                None => rec.id.strip_prefix("cdp-").unwrap_or(&rec.id).to_string(),
            };
            let cdp = Cdp {
                id: rec.id.clone(),
                sprite,
                class_id: rec.class_id,
                kind: rec.kind,
                source_id,
                parent_id: rec.parent_id.clone(),
                alpha_area: rec.alpha_area,
                strength_used: rec.strength_used,
            };
            match rec.kind {
                CdpKind::Real => bank.add_real(cdp)?,
                CdpKind::Synthetic => bank.append_synthetic(cdp)?,
            }
        }
        for rec in &manifest.cip_records {
            let pixels = load_raster(&dir.join(&rec.path))?;
            if pixels.channels() != 3 {
                return Err(Error::Integrity(format!("CIP {} image is not RGB", rec.id)));
            }
            bank.add_cip(Cip { id: rec.id.clone(), pixels, source_class: rec.source_class })?;
        }
        bank.verify()?;
        if bank.stats() != manifest.stats {
            return Err(Error::Integrity("manifest stats disagree with its records".into()));
        }
        // keep the on-disk record order so that save(load(x)) is stable
        let order: HashMap<&str, usize> =
            manifest.cdp_records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
        bank.reorder_cdps(|c| order[c.id.as_str()]);
        Ok(bank)
    }

    fn reorder_cdps(&mut self, key: impl Fn(&Cdp) -> usize) {
        let mut cdps = std::mem::take(&mut self.cdps);
        cdps.sort_by_key(|c| key(c));
        self.cdp_index.clear();
        self.real_by_class.clear();
        self.syn_by_class.clear();
        for c in cdps {
            self.push_cdp(c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::Raster;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sprite(v: u8) -> Raster {
        Raster::filled(4, 3, &[v, v, v, 255]).unwrap()
    }

    fn classes(n: u32) -> Vec<ClassInfo> {
        (0..n).map(|i| ClassInfo { id: ClassId(i), name: format!("class{i}") }).collect()
    }

    fn small_bank() -> Bank {
        let mut bank = Bank::new(classes(2)).unwrap();
        for c in 0..2u32 {
            for m in 0..2 {
                let id = format!("r{c}-{m}");
                bank.add_real(Cdp::real(&id, sprite(10 * m as u8), ClassId(c), &id).unwrap()).unwrap();
            }
            bank.add_cip(Cip {
                id: format!("bg{c}"),
                pixels: Raster::filled(8, 8, &[c as u8; 3]).unwrap(),
                source_class: ClassId(c),
            })
            .unwrap();
        }
        bank
    }

    #[test]
    fn combination_count_examples() {
        let stats = |c, m, k| BankStats { c, m, m_per_class: BTreeMap::new(), k };
        assert_eq!(combinations_per_cdp_family(&stats(10, 5, 3)), 200);
        assert_eq!(combinations_per_cdp_family(&stats(7, 4, 0)), 28);
        assert_eq!(combinations_per_cdp_family(&stats(200, 30, 3)), 24_000);
    }

    #[test]
    fn k_is_min_synthetic_count_per_real() {
        let mut bank = small_bank();
        assert_eq!(bank.stats().k, 0);
        let reals: Vec<Cdp> = bank.cdps().to_vec();
        for (i, parent) in reals.iter().enumerate() {
            for j in 0..3 {
                let syn = Cdp::synthetic(format!("s{i}-{j}"), sprite(99), parent, 0.4).unwrap();
                bank.append_synthetic(syn).unwrap();
            }
        }
        assert_eq!(bank.stats().k, 3);
        let extra = Cdp::synthetic("extra", sprite(1), &reals[0], 0.4).unwrap();
        bank.append_synthetic(extra).unwrap();
        assert_eq!(bank.stats().k, 3);
        assert_eq!(bank.stats().m, 2);
        bank.verify().unwrap();
    }

    #[test]
    fn integrity_violations_rejected() {
        let mut bank = small_bank();
        let parent = bank.cdp("r0-0").unwrap().clone();
        let mut dangling = Cdp::synthetic("s", sprite(1), &parent, 0.4).unwrap();
        dangling.parent_id = Some("missing".into());
        let err = bank.append_synthetic(dangling).unwrap_err();
        assert!(matches!(err, Error::Integrity(ref m) if m.contains("missing")));

        let mut wrong_class = Cdp::synthetic("s", sprite(1), &parent, 0.4).unwrap();
        wrong_class.class_id = ClassId(1);
        assert!(matches!(bank.append_synthetic(wrong_class), Err(Error::Integrity(_))));

        let dup = Cdp::real("r0-0", sprite(1), ClassId(0), "x").unwrap();
        assert!(matches!(bank.add_real(dup), Err(Error::Integrity(_))));

        let unknown = Cdp::real("r9", sprite(1), ClassId(9), "x").unwrap();
        assert!(matches!(bank.add_real(unknown), Err(Error::UnknownClass(9))));

        let invisible = Cdp::real("ghost", Raster::filled(2, 2, &[0, 0, 0, 0]).unwrap(), ClassId(0), "x").unwrap();
        assert!(bank.add_real(invisible).is_err());

        let bad_id = Cdp::real("../evil", sprite(1), ClassId(0), "x").unwrap();
        assert!(bank.add_real(bad_id).is_err());
    }

    #[test]
    fn sample_cdp_branches() {
        let mut bank = small_bank();
        let parent = bank.cdp("r0-0").unwrap().clone();
        bank.append_synthetic(Cdp::synthetic("s0", sprite(5), &parent, 0.4).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            assert_eq!(bank.sample_cdp(ClassId(0), 0.0, &mut rng).unwrap().kind, CdpKind::Real);
            assert_eq!(bank.sample_cdp(ClassId(0), 1.0, &mut rng).unwrap().kind, CdpKind::Synthetic);
            // class 1 has no synthetics
            assert_eq!(bank.sample_cdp(ClassId(1), 1.0, &mut rng).unwrap().kind, CdpKind::Real);
        }
        assert!(matches!(bank.sample_cdp(ClassId(5), 0.5, &mut rng), Err(Error::UnknownClass(5))));
    }

    #[test]
    fn empty_class_errors() {
        let mut bank = small_bank();
        bank.classes.push(ClassInfo { id: ClassId(2), name: "empty".into() });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(bank.sample_cdp(ClassId(2), 0.0, &mut rng), Err(Error::EmptyClass(2))));
        assert!(matches!(bank.verify(), Err(Error::EmptyClass(2))));
    }

    #[test]
    fn strict_cip_sampling() {
        let bank = small_bank();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(bank.sample_cip(ClassId(0), true, &mut rng).unwrap().source_class, ClassId(1));
        }
        let mut one_class = Bank::new(classes(1)).unwrap();
        one_class
            .add_cip(Cip { id: "bg".into(), pixels: Raster::filled(2, 2, &[0; 3]).unwrap(), source_class: ClassId(0) })
            .unwrap();
        assert!(matches!(one_class.sample_cip(ClassId(0), true, &mut rng), Err(Error::NoEligibleCip(_))));
        assert!(one_class.sample_cip(ClassId(0), false, &mut rng).is_ok());
    }

    #[test]
    fn sampling_is_deterministic() {
        let bank = small_bank();
        let ids = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|i| {
                    let a = bank.sample_cdp(ClassId(i % 2), 0.3, &mut rng).unwrap().id.clone();
                    let b = bank.sample_cip(ClassId(i % 2), true, &mut rng).unwrap().id.clone();
                    (a, b)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(3), ids(3));
        assert_ne!(ids(3), ids(4));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = small_bank();
        let parent = bank.cdp("r1-1").unwrap().clone();
        bank.append_synthetic(Cdp::synthetic("s1", sprite(7), &parent, 0.4).unwrap()).unwrap();
        bank.save(dir.path()).unwrap();
        let loaded = Bank::load(dir.path()).unwrap();
        assert_eq!(loaded.manifest(), bank.manifest());
        assert_eq!(Bank::read_manifest(dir.path()).unwrap(), bank.manifest());
        assert_eq!(loaded.cdp("s1").unwrap().sprite, bank.cdp("s1").unwrap().sprite);
        assert_eq!(loaded.cdp("s1").unwrap().source_id, "r1-1");
        let real = Cdp::real("cdp-img7", sprite(3), ClassId(0), "img7").unwrap();
        let mut with_prefix = small_bank();
        with_prefix.add_real(real).unwrap();
        with_prefix.save(&dir.path().join("b")).unwrap();
        assert_eq!(Bank::load(&dir.path().join("b")).unwrap().cdp("cdp-img7").unwrap().source_id, "img7");
        assert!(!dir.path().join("manifest.json.tmp").exists());
    }

    #[test]
    fn persisted_append_updates_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = small_bank();
        bank.save(dir.path()).unwrap();
        let parent = bank.cdp("r0-1").unwrap().clone();
        bank.append_synthetic_persisted(dir.path(), Cdp::synthetic("s9", sprite(3), &parent, 0.4).unwrap()).unwrap();
        let loaded = Bank::load(dir.path()).unwrap();
        assert!(loaded.cdp("s9").is_some());
        assert_eq!(loaded.manifest(), bank.manifest());
    }

    #[test]
    fn load_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        small_bank().save(dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"version\": 1", "\"version\": 99")).unwrap();
        assert!(Bank::load(dir.path()).is_err());

        small_bank().save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("cip/bg1.png")).unwrap();
        assert!(matches!(Bank::load(dir.path()), Err(Error::Image { .. })));
    }

    #[test]
    fn family_pairs_counts() {
        let mut bank = small_bank();
        let parent = bank.cdp("r0-0").unwrap().clone();
        for j in 0..2 {
            bank.append_synthetic(Cdp::synthetic(format!("s{j}"), sprite(5), &parent, 0.4).unwrap()).unwrap();
        }
        assert_eq!(bank.family_pairs("r0-0", false).unwrap().len(), 3 * 2);
        assert_eq!(bank.family_pairs("r0-0", true).unwrap().len(), 3);
        assert!(bank.family_pairs("s0", false).is_err());
    }
}
