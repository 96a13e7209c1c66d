//! Instance generation, feature extraction, test-set segmentation, and the
//! labelled JSONL splits.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{JsonlReader, JsonlWriter};
use crate::phdist::{sample_ph, MomentVector, PhGenConfig, PhaseTypeDist, ShapeStats};
use crate::rng::{derive_seed, rng_from_seed, Stream};
use crate::simulate::{simulate_system, Labels, SimConfig, SystemInstance};

/// Number of raw moments stored per distribution.
pub const STORED_MOMENTS: usize = 10;
pub const GROUPS: u8 = 32;
/// Segmentation threshold on the SCV of both distributions.
pub const SCV_SPLIT: f64 = 5.0;
pub const S_SPLIT: u32 = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub s_max: u32,
    pub ph: PhGenConfig,
    /// Lead-time rate bounds; the mean lead time is the reciprocal.
    pub lead_rate_min: f64,
    pub lead_rate_max: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            s_max: 30,
            ph: PhGenConfig::default(),
            lead_rate_min: 0.1,
            lead_rate_max: 10.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_max == 0 {
            return Err(Error::Config("s_max must be at least 1".into()));
        }
        if !(self.lead_rate_min > 0.0 && self.lead_rate_min <= self.lead_rate_max) {
            return Err(Error::Config("lead rate bounds must satisfy 0 < min <= max".into()));
        }
        self.ph.validate()
    }
}

/// Draws `S` uniform on `1..=s_max`, `s` uniform on `0..S`, a mean-one demand
/// law, and a lead law with mean `1/r`, `r ~ U(lead_rate_min, lead_rate_max)`.
pub fn generate_instance<R: Rng + ?Sized>(rng: &mut R, cfg: &GenConfig) -> Result<SystemInstance> {
    cfg.validate()?;
    let big_s = rng.random_range(1..=cfg.s_max);
    let s = rng.random_range(0..big_s);
    let demand = sample_ph(&cfg.ph, rng)?.rescale_to_mean(1.0)?;
    let rate = cfg.lead_rate_min + rng.random::<f64>() * (cfg.lead_rate_max - cfg.lead_rate_min);
    let lead = sample_ph(&cfg.ph, rng)?.rescale_to_mean(1.0 / rate)?;
    SystemInstance::new(s, big_s, demand, lead)
}

/// Test-set group in `1..=32`, ordered like the accuracy table: demand SCV,
/// lead SCV, rho, S, then s relative to `floor(S/2)`.
pub fn segment(scv_d: f64, scv_l: f64, rho: f64, big_s: u32, s: u32) -> u8 {
    16 * (scv_d > SCV_SPLIT) as u8
        + 8 * (scv_l > SCV_SPLIT) as u8
        + 4 * (rho > 1.0) as u8
        + 2 * (big_s > S_SPLIT) as u8
        + (s > big_s / 2) as u8
        + 1
}

/// Human-readable ranges of a group, for report tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupRanges {
    pub scv_d: &'static str,
    pub scv_l: &'static str,
    pub rho: &'static str,
    pub big_s: &'static str,
    pub s: &'static str,
}

pub fn group_ranges(group: u8) -> GroupRanges {
    let bits = group - 1;
    let pick = |bit: u8, lo: &'static str, hi: &'static str| if bits & bit != 0 { hi } else { lo };
    GroupRanges {
        scv_d: pick(16, "<=5", ">5"),
        scv_l: pick(8, "<=5", ">5"),
        rho: pick(4, "<=1", ">1"),
        big_s: pick(2, "<=15", ">15"),
        s: pick(1, "small", "large"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    #[serde(rename = "scv_D")]
    pub scv_d: f64,
    #[serde(rename = "scv_L")]
    pub scv_l: f64,
    pub rho: f64,
    pub group_id: u8,
    /// Seed of the substream the instance was drawn from.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: u64,
    pub s: u32,
    #[serde(rename = "S")]
    pub big_s: u32,
    #[serde(rename = "ph_D")]
    pub ph_d: PhaseTypeDist,
    #[serde(rename = "ph_L")]
    pub ph_l: PhaseTypeDist,
    #[serde(rename = "mom_D")]
    pub mom_d: MomentVector,
    #[serde(rename = "mom_L")]
    pub mom_l: MomentVector,
    pub labels: Option<Labels>,
    pub meta: Meta,
}

impl Record {
    pub fn from_instance(id: u64, inst: &SystemInstance, seed: u64) -> Result<Self> {
        let mom_d = inst.demand.moments(STORED_MOMENTS)?;
        let mom_l = inst.lead.moments(STORED_MOMENTS)?;
        let scv_d = ShapeStats::from_moments(&mom_d).scv;
        let scv_l = ShapeStats::from_moments(&mom_l).scv;
        let rho = mom_l.get(1) / mom_d.get(1);
        Ok(Self {
            id,
            s: inst.s,
            big_s: inst.big_s,
            ph_d: inst.demand.clone(),
            ph_l: inst.lead.clone(),
            mom_d,
            mom_l,
            labels: None,
            meta: Meta {
                scv_d,
                scv_l,
                rho,
                group_id: segment(scv_d, scv_l, rho, inst.big_s, inst.s),
                seed,
            },
        })
    }

    pub fn instance(&self) -> Result<SystemInstance> {
        SystemInstance::new(self.s, self.big_s, self.ph_d.clone(), self.ph_l.clone())
    }

    pub fn features(&self, layout: FeatureLayout) -> Result<Vec<f64>> {
        preprocess_features(self.s, self.big_s, &self.mom_d, &self.mom_l, layout)
    }

    /// Checks the stored moments, segmentation, and labels for consistency.
    pub fn validate(&self) -> Result<()> {
        let check = |stored: &MomentVector, ph: &PhaseTypeDist, which: &str| -> Result<()> {
            let fresh = ph.moments(stored.len())?;
            for (k, (a, b)) in stored.as_slice().iter().zip(fresh.as_slice()).enumerate() {
                if (a - b).abs() > 1e-9 * b.abs() {
                    return Err(Error::Data(format!(
                        "record {}: stored {which} moment {} = {a} but PH gives {b}",
                        self.id,
                        k + 1
                    )));
                }
            }
            Ok(())
        };
        check(&self.mom_d, &self.ph_d, "demand")?;
        check(&self.mom_l, &self.ph_l, "lead")?;
        if self.s >= self.big_s {
            return Err(Error::Data(format!("record {}: s >= S", self.id)));
        }
        let m = &self.meta;
        if segment(m.scv_d, m.scv_l, m.rho, self.big_s, self.s) != m.group_id {
            return Err(Error::Data(format!("record {}: group_id disagrees with meta", self.id)));
        }
        if let Some(l) = &self.labels {
            l.validate(self.big_s)?;
        }
        Ok(())
    }
}

/// A record without its PH matrices; cheap to load for training and scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordView {
    pub id: u64,
    pub s: u32,
    #[serde(rename = "S")]
    pub big_s: u32,
    #[serde(rename = "mom_D")]
    pub mom_d: MomentVector,
    #[serde(rename = "mom_L")]
    pub mom_l: MomentVector,
    pub labels: Option<Labels>,
    pub meta: Meta,
}

impl From<Record> for RecordView {
    fn from(r: Record) -> Self {
        Self { id: r.id, s: r.s, big_s: r.big_s, mom_d: r.mom_d, mom_l: r.mom_l, labels: r.labels, meta: r.meta }
    }
}

impl RecordView {
    pub fn features(&self, layout: FeatureLayout) -> Result<Vec<f64>> {
        preprocess_features(self.s, self.big_s, &self.mom_d, &self.mom_l, layout)
    }

    pub fn labels(&self) -> Result<&Labels> {
        self.labels
            .as_ref()
            .ok_or_else(|| Error::Data(format!("record {} is unlabelled", self.id)))
    }
}

/// How many moments of each distribution enter the features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    #[serde(rename = "n_D")]
    pub n_d: usize,
    #[serde(rename = "n_L")]
    pub n_l: usize,
}

impl FeatureLayout {
    pub const fn new(n_d: usize, n_l: usize) -> Self {
        Self { n_d, n_l }
    }

    pub fn symmetric(n: usize) -> Self {
        Self::new(n, n)
    }

    pub fn dim(&self) -> usize {
        2 + self.n_d + self.n_l
    }
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self::new(5, 5)
    }
}

/// `[s, S, ln m_D^1..ln m_D^{n_D}, ln m_L^1..ln m_L^{n_L}]`.
pub fn preprocess_features(
    s: u32,
    big_s: u32,
    mom_d: &MomentVector,
    mom_l: &MomentVector,
    layout: FeatureLayout,
) -> Result<Vec<f64>> {
    for (n, m, which) in [(layout.n_d, mom_d, "demand"), (layout.n_l, mom_l, "lead")] {
        if !(1..=STORED_MOMENTS).contains(&n) {
            return Err(Error::Config(format!("{which} moment count {n} outside 1..={STORED_MOMENTS}")));
        }
        if m.len() < n {
            return Err(Error::Data(format!("{which} has {} moments, {n} requested", m.len())));
        }
    }
    let mut out = Vec::with_capacity(layout.dim());
    out.push(s as f64);
    out.push(big_s as f64);
    for (n, m) in [(layout.n_d, mom_d), (layout.n_l, mom_l)] {
        for &v in &m.as_slice()[..n] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Data(format!("cannot take the log of moment {v}")));
            }
            out.push(v.ln());
        }
    }
    Ok(out)
}

/// I.i.d. records `ids`, each drawn from its own `(master, Instance, id)` substream.
pub fn generate_records(master_seed: u64, ids: std::ops::Range<u64>, cfg: &GenConfig) -> Result<Vec<Record>> {
    cfg.validate()?;
    ids.into_par_iter()
        .map(|id| {
            let seed = derive_seed(master_seed, Stream::Instance, id);
            let inst = generate_instance(&mut rng_from_seed(seed), cfg)?;
            Record::from_instance(id, &inst, seed)
        })
        .collect()
}

/// Rejection-samples records until each of the 32 groups holds `per_group`.
/// Accepted records get consecutive ids from `first_id`, in acceptance order.
pub fn generate_test_records(
    master_seed: u64,
    per_group: usize,
    first_id: u64,
    cfg: &GenConfig,
    max_draws: usize,
) -> Result<Vec<Record>> {
    cfg.validate()?;
    let mut counts = [0usize; GROUPS as usize];
    let mut out = Vec::with_capacity(per_group * GROUPS as usize);
    let mut draws = 0usize;
    const BATCH: u64 = 256;
    while out.len() < per_group * GROUPS as usize {
        if draws >= max_draws {
            let (g, &have) = counts
                .iter()
                .enumerate()
                .find(|(_, &c)| c < per_group)
                .expect("some group is short");
            return Err(Error::GroupStarved {
                group: g as u8 + 1,
                have,
                want: per_group,
                draws,
            });
        }
        let start = draws as u64;
        let end = (start + BATCH).min(max_draws as u64);
        let batch: Vec<Record> = (start..end)
            .into_par_iter()
            .map(|k| {
                let seed = derive_seed(master_seed, Stream::TestInstance, k);
                let inst = generate_instance(&mut rng_from_seed(seed), cfg)?;
                Record::from_instance(0, &inst, seed)
            })
            .collect::<Result<_>>()?;
        draws = end as usize;
        for mut rec in batch {
            let g = rec.meta.group_id as usize - 1;
            if counts[g] < per_group {
                counts[g] += 1;
                rec.id = first_id + out.len() as u64;
                out.push(rec);
            }
        }
    }
    Ok(out)
}

/// Labels records in place; record `id` is simulated with seed
/// `derive_seed(sim.seed, Simulation, id)`.
pub fn label_records(records: &mut [Record], sim: &SimConfig) -> Result<()> {
    sim.validate()?;
    records.par_iter_mut().try_for_each(|rec| {
        let cfg = SimConfig {
            seed: derive_seed(sim.seed, Stream::Simulation, rec.id),
            ..*sim
        };
        let mut labels = simulate_system(&rec.instance()?, &cfg)
            .map_err(|e| Error::Estimation(format!("record {}: {e}", rec.id)))?;
        labels.pi_arrival = None;
        rec.labels = Some(labels);
        Ok(())
    })
}

/// Streams `input` through the simulator into `output`, `chunk` records at a time.
pub fn label_file(input: &Path, output: &Path, sim: &SimConfig, chunk: usize) -> Result<usize> {
    let mut reader = JsonlReader::open(input)?;
    let mut writer = JsonlWriter::create(output)?;
    let mut total = 0;
    loop {
        let mut buf: Vec<Record> = Vec::with_capacity(chunk);
        while buf.len() < chunk {
            match reader.next_item::<Record>() {
                Some(r) => buf.push(r?),
                None => break,
            }
        }
        if buf.is_empty() {
            break;
        }
        label_records(&mut buf, sim)?;
        for r in &buf {
            writer.write(r)?;
        }
        total += buf.len();
    }
    writer.finish()?;
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test_per_group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

impl SplitPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train: dir.join("train.jsonl"),
            val: dir.join("val.jsonl"),
            test: dir.join("test.jsonl"),
        }
    }
}

const LABEL_CHUNK: usize = 512;

/// Generates and labels the train/validation/test splits under `dir`.
///
/// Train and validation are i.i.d.; the test split is rejection-sampled to
/// `test_per_group` records in each of the 32 groups. Record ids are unique
/// across splits so every record has its own simulation substream.
pub fn build_splits(
    master_seed: u64,
    sizes: SplitSizes,
    sim: &SimConfig,
    cfg: &GenConfig,
    dir: &Path,
) -> Result<SplitPaths> {
    if sizes.train == 0 || sizes.val == 0 || sizes.test_per_group == 0 {
        return Err(Error::Config("split sizes must be positive".into()));
    }
    std::fs::create_dir_all(dir)?;
    let paths = SplitPaths::in_dir(dir);
    let sim = SimConfig {
        seed: master_seed,
        ..*sim
    };
    let n_train = sizes.train as u64;
    let n_val = sizes.val as u64;

    let write_iid = |path: &Path, ids: std::ops::Range<u64>| -> Result<()> {
        let mut w = JsonlWriter::create(path)?;
        let mut start = ids.start;
        while start < ids.end {
            let end = (start + LABEL_CHUNK as u64).min(ids.end);
            let mut recs = generate_records(master_seed, start..end, cfg)?;
            label_records(&mut recs, &sim)?;
            for r in &recs {
                w.write(r)?;
            }
            start = end;
        }
        w.finish()?;
        Ok(())
    };
    write_iid(&paths.train, 0..n_train)?;
    write_iid(&paths.val, n_train..n_train + n_val)?;

    let budget = 5_000 * sizes.test_per_group * GROUPS as usize;
    let mut test = generate_test_records(master_seed, sizes.test_per_group, n_train + n_val, cfg, budget)?;
    let mut w = JsonlWriter::create(&paths.test)?;
    for chunk in test.chunks_mut(LABEL_CHUNK) {
        label_records(chunk, &sim)?;
        for r in chunk.iter() {
            w.write(r)?;
        }
    }
    w.finish()?;
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn empty() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    fn add(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeRanges {
    pub scv: Range,
    pub skewness: Range,
    pub kurtosis: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub records: usize,
    pub labelled: usize,
    pub demand: ShapeRanges,
    pub lead: ShapeRanges,
    pub rho: Range,
    pub big_s: Range,
    /// Records per test group, index 0 = group 1.
    pub group_counts: Vec<usize>,
}

/// Shape and parameter coverage of a record file.
pub fn summarize(views: &[RecordView]) -> DatasetStats {
    let new_ranges = || ShapeRanges {
        scv: Range::empty(),
        skewness: Range::empty(),
        kurtosis: Range::empty(),
    };
    let mut st = DatasetStats {
        records: views.len(),
        labelled: 0,
        demand: new_ranges(),
        lead: new_ranges(),
        rho: Range::empty(),
        big_s: Range::empty(),
        group_counts: vec![0; GROUPS as usize],
    };
    for v in views {
        st.labelled += v.labels.is_some() as usize;
        for (m, r) in [(&v.mom_d, &mut st.demand), (&v.mom_l, &mut st.lead)] {
            let sh = ShapeStats::from_moments(m);
            r.scv.add(sh.scv);
            r.skewness.add(sh.skewness);
            r.kurtosis.add(sh.kurtosis);
        }
        st.rho.add(v.meta.rho);
        st.big_s.add(v.big_s as f64);
        st.group_counts[v.meta.group_id as usize - 1] += 1;
    }
    st
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jsonl;

    #[test]
    fn segmentation_examples() {
        assert_eq!(segment(2.0, 7.0, 0.5, 10, 3), 9);
        assert_eq!(segment(0.5, 0.5, 0.5, 10, 2), 1);
        assert_eq!(segment(6.0, 6.0, 2.0, 20, 18), 32);
        // boundaries fall in the lower bin
        assert_eq!(segment(5.0, 5.0, 1.0, 15, 7), 1);
        assert_eq!(segment(5.0, 5.0, 1.0, 15, 8), 2);
    }

    #[test]
    fn group_ranges_match_segment_bits() {
        for g in 1..=GROUPS {
            let r = group_ranges(g);
            let scv_d = if r.scv_d == ">5" { 6.0 } else { 1.0 };
            let scv_l = if r.scv_l == ">5" { 6.0 } else { 1.0 };
            let rho = if r.rho == ">1" { 2.0 } else { 0.5 };
            let big_s = if r.big_s == ">15" { 20 } else { 10 };
            let s = if r.s == "large" { big_s - 1 } else { 0 };
            assert_eq!(segment(scv_d, scv_l, rho, big_s, s), g);
        }
    }

    #[test]
    fn features_of_exponential_system() {
        let d = PhaseTypeDist::exponential(1.0).unwrap();
        let l = PhaseTypeDist::exponential(2.0).unwrap();
        let inst = SystemInstance::new(2, 5, d, l).unwrap();
        let rec = Record::from_instance(0, &inst, 0).unwrap();
        let f = rec.features(FeatureLayout::default()).unwrap();
        let want = [
            2.0,
            5.0,
            0.0,
            2f64.ln(),
            6f64.ln(),
            24f64.ln(),
            120f64.ln(),
            0.5f64.ln(),
            0.5f64.ln(),
            0.75f64.ln(),
            1.5f64.ln(),
            3.75f64.ln(),
        ];
        assert_eq!(f.len(), 12);
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(rec.features(FeatureLayout::symmetric(1)).unwrap().len(), 4);
        assert!(rec.features(FeatureLayout::symmetric(0)).is_err());
        assert!(rec.features(FeatureLayout::symmetric(11)).is_err());
    }

    #[test]
    fn feature_roundtrip_through_json() {
        let recs = generate_records(7, 0..4, &GenConfig::default()).unwrap();
        for r in &recs {
            let line = jsonl::to_string(r).unwrap();
            let back: Record = serde_json::from_str(&line).unwrap();
            let rebuilt = Record::from_instance(back.id, &back.instance().unwrap(), back.meta.seed).unwrap();
            let a = r.features(FeatureLayout::default()).unwrap();
            let b = rebuilt.features(FeatureLayout::default()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-9);
            }
            back.validate().unwrap();
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_records(3, 10..13, &GenConfig::default()).unwrap();
        let b = generate_records(3, 10..13, &GenConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn threshold_distribution() {
        let cfg = GenConfig {
            ph: PhGenConfig {
                weights: crate::phdist::FamilyWeights::only(crate::phdist::Family::Exponential),
                ..Default::default()
            },
            ..Default::default()
        };
        let mut rng = rng_from_seed(99);
        let n = 10_000;
        let mut above = 0;
        let mut log_rho = Vec::with_capacity(n);
        for _ in 0..n {
            let inst = generate_instance(&mut rng, &cfg).unwrap();
            assert!(inst.s < inst.big_s && inst.big_s <= 30);
            assert!((0.1 - 1e-12..=10.0 + 1e-9).contains(&inst.rho));
            above += (inst.big_s > 15) as usize;
            log_rho.push(inst.rho.ln());
        }
        let frac = above as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.02, "P(S>15) = {frac}");
        // rho = 1/r with r uniform: P(rho < 1) = P(r > 1) = 0.9/0.99... mass concentrates below 1
        let below_one = log_rho.iter().filter(|&&x| x < 0.0).count() as f64 / n as f64;
        assert!((below_one - 9.0 / 9.9).abs() < 0.02, "{below_one}");
    }

    #[test]
    fn test_split_fills_every_group() {
        let recs = generate_test_records(5, 1, 100, &GenConfig::default(), 200_000).unwrap();
        assert_eq!(recs.len(), 32);
        let mut seen = [false; 32];
        for (k, r) in recs.iter().enumerate() {
            assert_eq!(r.id, 100 + k as u64);
            seen[r.meta.group_id as usize - 1] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn starved_group_is_named() {
        let cfg = GenConfig {
            ph: PhGenConfig {
                weights: crate::phdist::FamilyWeights::only(crate::phdist::Family::Exponential),
                ..Default::default()
            },
            ..Default::default()
        };
        // exponential SCV is 1, so the high-SCV groups never fill
        let err = generate_test_records(1, 1, 0, &cfg, 2_000).unwrap_err();
        match err {
            Error::GroupStarved { group, .. } => assert!(group > 8),
            e => panic!("unexpected {e}"),
        }
    }
}
