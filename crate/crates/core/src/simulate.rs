//! Discrete-event simulation of the continuous-review, lost-sales, unit-demand
//! (s,S) system, with exact oracles for the cases that admit one.
//!
//! Event contract: inventory starts at `S`; a demand takes one unit if any is
//! on hand and is lost otherwise; the demand that brings the level to `s` or
//! below places an order if none is outstanding; the order arrives after a
//! lead time and resets the level to `S`. At most one order is outstanding.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phdist::PhaseTypeDist;
use crate::rng::{derive_seed, rng_from_seed, Stream};

/// An (s,S) system with demand interarrival law `demand` and lead-time law
/// `lead`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemInstance {
    pub s: u32,
    pub big_s: u32,
    pub demand: PhaseTypeDist,
    pub lead: PhaseTypeDist,
    /// Mean lead time over mean interarrival time.
    pub rho: f64,
}

impl SystemInstance {
    pub fn new(s: u32, big_s: u32, demand: PhaseTypeDist, lead: PhaseTypeDist) -> Result<Self> {
        if big_s == 0 || s > big_s {
            return Err(Error::Config(format!("need 0 <= s <= S and S >= 1, got s={s}, S={big_s}")));
        }
        let rho = lead.mean()? / demand.mean()?;
        Ok(Self {
            s,
            big_s,
            demand,
            lead,
            rho,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_arrivals: u64,
    /// Fraction of arrivals discarded before statistics start.
    pub warmup_frac: f64,
    pub seed: u64,
}

impl SimConfig {
    pub const MIN_ARRIVALS: u64 = 10_000;

    pub fn new(n_arrivals: u64, seed: u64) -> Self {
        Self {
            n_arrivals,
            warmup_frac: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_arrivals < Self::MIN_ARRIVALS {
            return Err(Error::Config(format!(
                "n_arrivals {} below {}",
                self.n_arrivals,
                Self::MIN_ARRIVALS
            )));
        }
        if !(0.0..0.5).contains(&self.warmup_frac) {
            return Err(Error::Config(format!("warmup_frac {} outside [0, 0.5)", self.warmup_frac)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub arrivals: u64,
    pub replenishments: u64,
    pub warmup_frac: f64,
    pub seed: u64,
}

/// Stationary measures of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    /// Time-stationary inventory PMF over levels `0..=S`.
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    /// Expected time between successive replenishments.
    #[serde(rename = "EC")]
    pub ec: f64,
    /// Probability that an arriving demand finds the shelf empty.
    pub pi0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_arrival: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag: Option<Diagnostics>,
}

impl Labels {
    pub fn mean_level(&self) -> f64 {
        self.p.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
    }

    /// PMF zero-padded (or checked) to `len` entries.
    pub fn padded(&self, len: usize) -> Result<Vec<f64>> {
        if self.p.len() > len {
            return Err(Error::Data(format!("PMF of length {} exceeds {len}", self.p.len())));
        }
        let mut out = self.p.clone();
        out.resize(len, 0.0);
        Ok(out)
    }

    pub fn validate(&self, big_s: u32) -> Result<()> {
        if self.p.len() != big_s as usize + 1 {
            return Err(Error::Data(format!("PMF length {} != S+1 = {}", self.p.len(), big_s + 1)));
        }
        if self.p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Data("PMF has negative or non-finite entries".into()));
        }
        let total: f64 = self.p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("PMF sums to {total}")));
        }
        if !(0.0..=1.0).contains(&self.pi0) {
            return Err(Error::Data(format!("pi0 = {} outside [0, 1]", self.pi0)));
        }
        if !(self.ec > 0.0) || !self.ec.is_finite() {
            return Err(Error::Data(format!("EC = {} not positive", self.ec)));
        }
        Ok(())
    }
}

/// Runs one simulation of `inst`. Deterministic in `(inst, cfg)`.
pub fn simulate_system(inst: &SystemInstance, cfg: &SimConfig) -> Result<Labels> {
    cfg.validate()?;
    if inst.big_s == 0 || inst.s > inst.big_s {
        return Err(Error::Config("invalid thresholds".into()));
    }
    let big_s = inst.big_s as usize;
    let s = inst.s as usize;
    let demand = inst.demand.sampler();
    let lead = inst.lead.sampler();
    let mut rng = rng_from_seed(cfg.seed);

    let n = cfg.n_arrivals;
    let warm = (n as f64 * cfg.warmup_frac).floor() as u64;

    let mut level = big_s;
    let mut now = 0.0f64;
    let mut next_demand = demand.sample(&mut rng);
    let mut order_due: Option<f64> = None;
    if level <= s {
        order_due = Some(lead.sample(&mut rng));
    }

    let mut measuring = warm == 0;
    let mut occupancy = vec![0.0f64; big_s + 1];
    let mut seen = vec![0u64; big_s + 1];
    let mut last_repl: Option<f64> = None;
    let mut gap_sum = 0.0f64;
    let mut gaps = 0u64;
    let mut replenishments = 0u64;

    for k in 1..=n {
        // Ties go to the replenishment.
        while let Some(due) = order_due {
            if due > next_demand {
                break;
            }
            if measuring {
                occupancy[level] += due - now;
            }
            now = due;
            level = big_s;
            order_due = None;
            if measuring {
                if let Some(prev) = last_repl {
                    gap_sum += now - prev;
                    gaps += 1;
                }
                last_repl = Some(now);
                replenishments += 1;
            }
            if level <= s {
                order_due = Some(now + lead.sample(&mut rng));
            }
        }

        if measuring {
            occupancy[level] += next_demand - now;
        }
        now = next_demand;
        if k > warm {
            seen[level] += 1;
        }
        level = level.saturating_sub(1);
        if level <= s && order_due.is_none() {
            order_due = Some(now + lead.sample(&mut rng));
        }
        debug_assert!(level <= big_s);
        if k == warm {
            measuring = true;
        }
        next_demand = now + demand.sample(&mut rng);
    }

    if gaps == 0 {
        return Err(Error::Estimation(format!(
            "{replenishments} replenishment(s) after warm-up over {n} arrivals; cannot estimate EC"
        )));
    }
    let total: f64 = occupancy.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Estimation("empty measurement window".into()));
    }
    let counted = (n - warm) as f64;
    let p = occupancy.iter().map(|t| t / total).collect();
    let pi_arrival: Vec<f64> = seen.iter().map(|&c| c as f64 / counted).collect();
    Ok(Labels {
        p,
        ec: gap_sum / gaps as f64,
        pi0: pi_arrival[0],
        pi_arrival: Some(pi_arrival),
        diag: Some(Diagnostics {
            arrivals: n,
            replenishments,
            warmup_frac: cfg.warmup_frac,
            seed: cfg.seed,
        }),
    })
}

/// Exact measures for Poisson demand (rate `lambda`) and exponential lead
/// times (rate `mu`).
///
/// The order-outstanding flag is a function of the level (outstanding iff
/// level <= s), so the chain lives on levels `0..=S`; it is solved directly
/// with the normalization replacing one balance equation.
pub fn ctmc_oracle(s: u32, big_s: u32, lambda: f64, mu: f64) -> Result<Labels> {
    if s >= big_s {
        return Err(Error::Config(format!("CTMC oracle needs s < S, got s={s}, S={big_s}")));
    }
    if !(lambda > 0.0 && mu > 0.0) {
        return Err(Error::Config("rates must be positive".into()));
    }
    let n = big_s as usize + 1;
    let s = s as usize;
    let mut q = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        if i > 0 {
            q[(i, i - 1)] += lambda;
        }
        if i <= s {
            q[(i, n - 1)] += mu;
        }
        let out: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
        q[(i, i)] = -out;
    }
    let mut a = q.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numeric("singular CTMC balance system".into()))?;
    let p: Vec<f64> = pi.iter().map(|v| v.max(0.0)).collect();
    let ordering: f64 = p[..=s].iter().sum();
    Ok(Labels {
        ec: 1.0 / (mu * ordering),
        pi0: p[0],
        pi_arrival: Some(p.clone()),
        p,
        diag: None,
    })
}

/// Measures in the limit of instantaneous replenishment: every level in
/// `s+1..=S` is held for one mean interarrival per cycle.
pub fn zero_lead_oracle(s: u32, big_s: u32, m_d1: f64) -> Result<Labels> {
    if s >= big_s {
        return Err(Error::Config(format!("zero-lead oracle needs s < S, got s={s}, S={big_s}")));
    }
    if !(m_d1 > 0.0) {
        return Err(Error::Config("mean interarrival must be positive".into()));
    }
    let width = (big_s - s) as f64;
    let p: Vec<f64> = (0..=big_s)
        .map(|i| if i > s { 1.0 / width } else { 0.0 })
        .collect();
    Ok(Labels {
        ec: width * m_d1,
        pi0: 0.0,
        pi_arrival: Some(p.clone()),
        p,
        diag: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    /// Half-width of the 95% normal-approximation interval.
    pub half_width: f64,
}

impl Interval {
    pub fn length(&self) -> f64 {
        2.0 * self.half_width
    }

    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            half_width: 1.959_963_984_540_054 * (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub runs: usize,
    pub mean_level: Interval,
    pub ec: Interval,
    pub pi0: Interval,
}

/// Independent replications on distinct substreams of `cfg.seed`.
pub fn replication_ci(inst: &SystemInstance, cfg: &SimConfig, runs: usize) -> Result<ReplicationSummary> {
    let seeds: Vec<u64> = (0..runs as u64)
        .map(|r| derive_seed(cfg.seed, Stream::Replication, r))
        .collect();
    replication_ci_with_seeds(inst, cfg, &seeds)
}

pub fn replication_ci_with_seeds(
    inst: &SystemInstance,
    cfg: &SimConfig,
    seeds: &[u64],
) -> Result<ReplicationSummary> {
    if seeds.len() < 2 {
        return Err(Error::Config("replication needs at least 2 runs".into()));
    }
    let labels = seeds
        .par_iter()
        .map(|&seed| simulate_system(inst, &SimConfig { seed, ..*cfg }))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&Labels) -> f64| labels.iter().map(f).collect::<Vec<_>>();
    Ok(ReplicationSummary {
        runs: seeds.len(),
        mean_level: Interval::from_samples(&col(Labels::mean_level)),
        ec: Interval::from_samples(&col(|l| l.ec)),
        pi0: Interval::from_samples(&col(|l| l.pi0)),
    })
}

/// Total-variation distance between two PMFs (shorter one zero-extended).
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    0.5 * (0..n)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
