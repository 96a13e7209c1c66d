//! Long-run cost of an (s, S) policy and exhaustive search over the policy grid.

use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{predict, ModelBundle, Query};
use crate::phdist::PhaseTypeDist;
use crate::rng::{derive_seed, Stream};
use crate::simulate::{ctmc_oracle, simulate_system, SimConfig, SystemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// Fixed cost per replenishment.
    #[serde(rename = "K_o")]
    pub k_o: f64,
    /// Purchase cost per unit sold.
    pub c_r: f64,
    /// Holding cost per unit per time.
    pub c_h: f64,
    /// Cost per lost sale.
    pub c_l: f64,
    /// Mean demand interarrival time, in the user's time unit.
    #[serde(rename = "m_D1")]
    pub m_d1: f64,
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        let costs = [self.k_o, self.c_r, self.c_h, self.c_l];
        if costs.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::Config(format!("costs must be finite and nonnegative: {costs:?}")));
        }
        if !(self.m_d1 > 0.0) || !self.m_d1.is_finite() {
            return Err(Error::Config(format!("m_D1 = {} must be positive", self.m_d1)));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { k_o: self.k_o * c, c_r: self.c_r * c, c_h: self.c_h * c, c_l: self.c_l * c, m_d1: self.m_d1 }
    }
}

/// Requires `P(I ≥ k) ≥ min_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub k: u32,
    pub min_prob: f64,
}

impl Constraint {
    pub fn new(k: u32, min_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&min_prob) {
            return Err(Error::Config(format!("min_prob {min_prob} outside [0, 1]")));
        }
        Ok(Self { k, min_prob })
    }
}

impl FromStr for Constraint {
    type Err = Error;

    /// `"k:prob"`, e.g. `"5:0.995"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("constraint {s:?} is not of the form k:prob"));
        let (k, p) = s.split_once(':').ok_or_else(bad)?;
        Self::new(k.trim().parse().map_err(|_| bad())?, p.trim().parse().map_err(|_| bad())?)
    }
}

/// `g = c_h·E[I] + K_o/E[C] + c_r(1 − pi0)/m_D1 + c_l·pi0/m_D1`
pub fn cost_g(p: &[f64], ec: f64, pi0: f64, spec: &CostSpec) -> Result<f64> {
    spec.validate()?;
    if !(ec > 0.0) || !ec.is_finite() {
        return Err(Error::Config(format!("EC = {ec} must be positive")));
    }
    if !(0.0..=1.0).contains(&pi0) {
        return Err(Error::Config(format!("pi0 = {pi0} outside [0, 1]")));
    }
    let ei: f64 = p.iter().enumerate().map(|(i, v)| i as f64 * v).sum();
    Ok(spec.c_h * ei + spec.k_o / ec + (spec.c_r * (1.0 - pi0) + spec.c_l * pi0) / spec.m_d1)
}

pub fn constraint_check(p: &[f64], c: &Constraint) -> bool {
    let tail: f64 = p.iter().skip(c.k as usize).sum();
    tail >= c.min_prob
}

/// Stationary measures of one policy in the user's time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    #[serde(rename = "EC")]
    pub ec: f64,
    pub pi0: f64,
}

/// Source of stationary measures for a batch of `(s, S)` pairs.
pub trait Backend {
    fn name(&self) -> &'static str;
    fn evaluate(&self, pairs: &[(u32, u32)]) -> Result<Vec<Measures>>;
}

/// Trained networks; one batched inference call for the whole grid.
pub struct NnBackend<'a> {
    pub bundle: &'a ModelBundle,
    pub mom_d: Vec<f64>,
    pub mom_l: Vec<f64>,
}

impl Backend for NnBackend<'_> {
    fn name(&self) -> &'static str {
        "nn"
    }

    fn evaluate(&self, pairs: &[(u32, u32)]) -> Result<Vec<Measures>> {
        let queries: Vec<Query> = pairs
            .iter()
            .map(|&(s, big_s)| Query { s, big_s, mom_d: self.mom_d.clone(), mom_l: self.mom_l.clone() })
            .collect();
        Ok(predict(self.bundle, &queries)?
            .into_iter()
            .map(|p| Measures { p: p.p_hat, ec: p.ec_hat, pi0: p.pi0_hat })
            .collect())
    }
}

/// Discrete-event simulation, one run per pair (in parallel). Pair `i` of the
/// grid uses seed `derive_seed(cfg.seed, Simulation, i)`.
pub struct SimBackend {
    pub demand: PhaseTypeDist,
    pub lead: PhaseTypeDist,
    pub cfg: SimConfig,
}

impl Backend for SimBackend {
    fn name(&self) -> &'static str {
        "sim"
    }

    fn evaluate(&self, pairs: &[(u32, u32)]) -> Result<Vec<Measures>> {
        pairs
            .par_iter()
            .enumerate()
            .map(|(i, &(s, big_s))| {
                let inst = SystemInstance::new(s, big_s, self.demand.clone(), self.lead.clone())?;
                let cfg = SimConfig { seed: derive_seed(self.cfg.seed, Stream::Simulation, i as u64), ..self.cfg };
                let l = simulate_system(&inst, &cfg)?;
                Ok(Measures { p: l.p, ec: l.ec, pi0: l.pi0 })
            })
            .collect()
    }
}

/// Exact measures for exponential interarrivals (rate `lambda`) and lead times (rate `mu`).
pub struct CtmcBackend {
    pub lambda: f64,
    pub mu: f64,
}

impl Backend for CtmcBackend {
    fn name(&self) -> &'static str {
        "ctmc"
    }

    fn evaluate(&self, pairs: &[(u32, u32)]) -> Result<Vec<Measures>> {
        pairs
            .iter()
            .map(|&(s, big_s)| {
                let l = ctmc_oracle(s, big_s, self.lambda, self.mu)?;
                Ok(Measures { p: l.p, ec: l.ec, pi0: l.pi0 })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub s: u32,
    #[serde(rename = "S")]
    pub big_s: u32,
    pub g: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub s: u32,
    #[serde(rename = "S")]
    pub big_s: u32,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub table: Vec<GridPoint>,
    pub unconstrained: Optimum,
    /// `None` without a constraint or when no pair satisfies it.
    pub constrained: Option<Optimum>,
    pub infeasible: bool,
    pub wall_ms: f64,
}

/// All `0 ≤ s < S ≤ s_max`, ordered by `S` then `s`; `s_max(s_max+1)/2` pairs.
pub fn grid_pairs(s_max: u32) -> Vec<(u32, u32)> {
    (1..=s_max).flat_map(|big_s| (0..big_s).map(move |s| (s, big_s))).collect()
}

/// Argmin over the points passing `keep`; ties go to smaller `S`, then smaller `s`.
pub fn argmin(table: &[GridPoint], keep: impl Fn(&GridPoint) -> bool) -> Option<Optimum> {
    table
        .iter()
        .filter(|p| keep(p))
        .min_by(|a, b| a.g.total_cmp(&b.g).then(a.big_s.cmp(&b.big_s)).then(a.s.cmp(&b.s)))
        .map(|p| Optimum { s: p.s, big_s: p.big_s, g: p.g })
}

pub fn grid_optimize(backend: &dyn Backend, spec: &CostSpec, constraint: Option<&Constraint>, s_max: u32) -> Result<GridResult> {
    spec.validate()?;
    if s_max == 0 || s_max > crate::nn::MAX_S {
        return Err(Error::Config(format!("S_max = {s_max} outside 1..={}", crate::nn::MAX_S)));
    }
    let start = Instant::now();
    let pairs = grid_pairs(s_max);
    let measures = backend.evaluate(&pairs)?;
    let table = pairs
        .iter()
        .zip(&measures)
        .map(|(&(s, big_s), m)| {
            Ok(GridPoint {
                s,
                big_s,
                g: cost_g(&m.p, m.ec, m.pi0, spec)?,
                feasible: constraint.map_or(true, |c| constraint_check(&m.p, c)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let unconstrained = argmin(&table, |_| true).expect("grid is non-empty");
    let constrained = constraint.and_then(|_| argmin(&table, |p| p.feasible));
    let infeasible = constraint.is_some() && constrained.is_none();
    if infeasible {
        log::warn!("no (s, S) pair satisfies the constraint");
    }
    Ok(GridResult { table, unconstrained, constrained, infeasible, wall_ms: start.elapsed().as_secs_f64() * 1e3 })
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,S,g,feasible\n");
        for p in &self.table {
            out.push_str(&format!("{},{},{},{}\n", p.s, p.big_s, p.g, p.feasible));
        }
        out
    }
}
