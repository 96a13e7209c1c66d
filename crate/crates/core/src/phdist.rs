//! Phase-type distributions: representation, moments, rescaling, sampling, and
//! random generation of diverse instances.
//!
//! A PH distribution is the absorption time of a continuous-time Markov chain
//! with `p` transient phases, started from `alpha` and driven by the
//! subgenerator `T`. Exit rates are `t = -T·1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{exp_variate, open01};

pub const MAX_ORDER: usize = 500;

const ALPHA_TOL: f64 = 1e-12;
const COND_WARN: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PhRepr", into = "PhRepr")]
pub struct PhaseTypeDist {
    alpha: Vec<f64>,
    t: Vec<Vec<f64>>,
}

/// Wire form: `{"alpha": [...], "T": [[...]]}`, `T` row-major.
#[derive(Serialize, Deserialize)]
struct PhRepr {
    alpha: Vec<f64>,
    #[serde(rename = "T")]
    t: Vec<Vec<f64>>,
}

impl TryFrom<PhRepr> for PhaseTypeDist {
    type Error = Error;
    fn try_from(r: PhRepr) -> Result<Self> {
        PhaseTypeDist::new(r.alpha, r.t)
    }
}

impl From<PhaseTypeDist> for PhRepr {
    fn from(ph: PhaseTypeDist) -> Self {
        PhRepr {
            alpha: ph.alpha,
            t: ph.t,
        }
    }
}

impl PhaseTypeDist {
    /// Builds and validates a PH distribution.
    pub fn new(alpha: Vec<f64>, t: Vec<Vec<f64>>) -> Result<Self> {
        let ph = Self { alpha, t };
        ph.validate()?;
        Ok(ph)
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![vec![-rate]])
    }

    pub fn erlang(phases: usize, rate: f64) -> Result<Self> {
        if phases == 0 {
            return Err(Error::InvalidPh("Erlang needs at least one phase".into()));
        }
        let mut t = vec![vec![0.0; phases]; phases];
        for i in 0..phases {
            t[i][i] = -rate;
            if i + 1 < phases {
                t[i][i + 1] = rate;
            }
        }
        let mut alpha = vec![0.0; phases];
        alpha[0] = 1.0;
        Self::new(alpha, t)
    }

    /// Mixture of exponentials: branch `i` is taken with probability `probs[i]`.
    pub fn hyperexponential(probs: &[f64], rates: &[f64]) -> Result<Self> {
        if probs.len() != rates.len() || probs.is_empty() {
            return Err(Error::InvalidPh("branch probabilities and rates differ in length".into()));
        }
        let p = probs.len();
        let mut t = vec![vec![0.0; p]; p];
        for (i, &r) in rates.iter().enumerate() {
            t[i][i] = -r;
        }
        Self::new(probs.to_vec(), t)
    }

    /// Coxian chain: phase `i` moves on to `i+1` with probability
    /// `continue_probs[i]`, otherwise absorbs. The last phase always absorbs.
    pub fn coxian(rates: &[f64], continue_probs: &[f64]) -> Result<Self> {
        let p = rates.len();
        if p == 0 || continue_probs.len() + 1 != p {
            return Err(Error::InvalidPh("Coxian needs p rates and p-1 continue probabilities".into()));
        }
        let mut t = vec![vec![0.0; p]; p];
        for i in 0..p {
            t[i][i] = -rates[i];
            if i + 1 < p {
                t[i][i + 1] = rates[i] * continue_probs[i];
            }
        }
        let mut alpha = vec![0.0; p];
        alpha[0] = 1.0;
        Self::new(alpha, t)
    }

    /// Mixture of Erlang blocks `(phases, rate)` with the given weights.
    pub fn erlang_mixture(weights: &[f64], blocks: &[(usize, f64)]) -> Result<Self> {
        if weights.len() != blocks.len() || blocks.is_empty() {
            return Err(Error::InvalidPh("mixture weights and blocks differ in length".into()));
        }
        let p: usize = blocks.iter().map(|b| b.0).sum();
        let mut t = vec![vec![0.0; p]; p];
        let mut alpha = vec![0.0; p];
        let mut start = 0;
        for (&w, &(k, rate)) in weights.iter().zip(blocks) {
            if k == 0 {
                return Err(Error::InvalidPh("empty Erlang block".into()));
            }
            alpha[start] = w;
            for i in start..start + k {
                t[i][i] = -rate;
                if i + 1 < start + k {
                    t[i][i + 1] = rate;
                }
            }
            start += k;
        }
        Self::new(alpha, t)
    }

    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Subgenerator rows.
    pub fn subgenerator(&self) -> &[Vec<f64>] {
        &self.t
    }

    /// Exit rates `t = -T·1`, clamped at zero against rounding.
    pub fn exit_rates(&self) -> Vec<f64> {
        self.t
            .iter()
            .map(|row| (-row.iter().sum::<f64>()).max(0.0))
            .collect()
    }

    /// Checks every structural invariant of the representation.
    pub fn validate(&self) -> Result<()> {
        let p = self.alpha.len();
        if p == 0 || p > MAX_ORDER {
            return Err(Error::InvalidPh(format!("order {p} outside 1..={MAX_ORDER}")));
        }
        if self.t.len() != p || self.t.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidPh(format!("T must be {p}x{p}")));
        }
        if self.alpha.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidPh("alpha has negative or non-finite entries".into()));
        }
        let total: f64 = self.alpha.iter().sum();
        if (total - 1.0).abs() > ALPHA_TOL {
            return Err(Error::InvalidPh(format!("alpha sums to {total}")));
        }
        for (i, row) in self.t.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidPh(format!("row {i} has non-finite entries")));
            }
            let diag = row[i];
            if !(diag < 0.0) {
                return Err(Error::InvalidPh(format!("T[{i}][{i}] = {diag} is not negative")));
            }
            if row.iter().enumerate().any(|(j, &v)| j != i && v < 0.0) {
                return Err(Error::InvalidPh(format!("row {i} has a negative off-diagonal rate")));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1e-12 * diag.abs() {
                return Err(Error::InvalidPh(format!("row {i} sums to {sum} > 0")));
            }
        }
        // -T is nonsingular iff every phase can reach absorption.
        let exits = self.exit_rates();
        let mut reaches = exits.iter().map(|&e| e > 0.0).collect::<Vec<_>>();
        let mut stack: Vec<usize> = (0..p).filter(|&i| reaches[i]).collect();
        if stack.is_empty() {
            return Err(Error::InvalidPh("no phase has a positive exit rate".into()));
        }
        let mut preds = vec![Vec::new(); p];
        for (i, row) in self.t.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if j != i && v > 0.0 {
                    preds[j].push(i);
                }
            }
        }
        while let Some(j) = stack.pop() {
            for &i in &preds[j] {
                if !reaches[i] {
                    reaches[i] = true;
                    stack.push(i);
                }
            }
        }
        if let Some(i) = reaches.iter().position(|&r| !r) {
            return Err(Error::InvalidPh(format!("phase {i} cannot reach absorption")));
        }
        Ok(())
    }

    fn neg_t(&self) -> DMatrix<f64> {
        let p = self.order();
        DMatrix::from_fn(p, p, |i, j| -self.t[i][j])
    }

    /// Raw moments `m^k = k! · alpha · (-T)^{-k} · 1` for `k = 1..=n`,
    /// by repeated solves against `-T`: sparse back substitution when `T` is
    /// upper triangular (every acyclic family), one LU factorization otherwise.
    pub fn moments(&self, n: usize) -> Result<MomentVector> {
        if n == 0 {
            return Err(Error::Config("moment count must be at least 1".into()));
        }
        let xs = if self.is_upper_triangular() {
            self.solve_chain_triangular(n)
        } else {
            self.solve_chain_lu(n)?
        };
        let mut fact = 1.0;
        let mut out = Vec::with_capacity(n);
        for (k, x) in xs.iter().enumerate() {
            fact *= (k + 1) as f64;
            let m = fact * self.alpha.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::Numeric(format!("moment {} evaluated to {m}", k + 1)));
            }
            out.push(m);
        }
        Ok(MomentVector(out))
    }

    fn is_upper_triangular(&self) -> bool {
        self.t
            .iter()
            .enumerate()
            .all(|(i, row)| row[..i].iter().all(|&v| v == 0.0))
    }

    /// `x_k = (-T)^{-k} 1` for `k = 1..=n`, `T` upper triangular.
    fn solve_chain_triangular(&self, n: usize) -> Vec<Vec<f64>> {
        let p = self.order();
        let upper: Vec<Vec<(usize, f64)>> = self
            .t
            .iter()
            .enumerate()
            .map(|(i, row)| {
                (i + 1..p)
                    .filter(|&j| row[j] != 0.0)
                    .map(|j| (j, row[j]))
                    .collect()
            })
            .collect();
        let mut prev = vec![1.0; p];
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = vec![0.0; p];
            for i in (0..p).rev() {
                let acc: f64 = upper[i].iter().map(|&(j, v)| v * x[j]).sum();
                x[i] = (prev[i] + acc) / -self.t[i][i];
            }
            out.push(x.clone());
            prev = x;
        }
        out
    }

    fn solve_chain_lu(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        let p = self.order();
        let lu = self.neg_t().lu();
        let u = lu.u();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..p {
            let d = u[(i, i)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo == 0.0 || !lo.is_finite() {
            return Err(Error::Numeric("-T is singular".into()));
        }
        if hi / lo > COND_WARN {
            log::warn!("ill-conditioned subgenerator: pivot ratio {:.3e}", hi / lo);
        }
        let mut x = DVector::from_element(p, 1.0);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            x = lu
                .solve(&x)
                .ok_or_else(|| Error::Numeric("-T is singular".into()))?;
            out.push(x.as_slice().to_vec());
        }
        Ok(out)
    }

    pub fn mean(&self) -> Result<f64> {
        Ok(self.moments(1)?.0[0])
    }

    pub fn stats(&self) -> Result<ShapeStats> {
        Ok(ShapeStats::from_moments(&self.moments(4)?))
    }

    /// Scales all rates so the mean becomes `target_mean`; shape is untouched.
    pub fn rescale_to_mean(&self, target_mean: f64) -> Result<Self> {
        if !(target_mean > 0.0) || !target_mean.is_finite() {
            return Err(Error::Config(format!("target mean {target_mean} must be positive")));
        }
        let factor = self.mean()? / target_mean;
        self.scale_rates(factor)
    }

    /// Multiplies `T` by `factor` (divides every moment `m^k` by `factor^k`).
    pub fn scale_rates(&self, factor: f64) -> Result<Self> {
        let t = self
            .t
            .iter()
            .map(|row| row.iter().map(|v| v * factor).collect())
            .collect();
        Self::new(self.alpha.clone(), t)
    }

    pub fn sampler(&self) -> PhSampler {
        PhSampler::new(self)
    }
}

/// Draws one variate. Builds a throwaway [`PhSampler`]; reuse a sampler for
/// repeated draws.
pub fn draw_variate<R: Rng + ?Sized>(ph: &PhaseTypeDist, rng: &mut R) -> f64 {
    ph.sampler().sample(rng)
}

/// Raw moments `m^1..m^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MomentVector(pub Vec<f64>);

impl MomentVector {
    pub fn new(m: Vec<f64>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::Data("empty moment vector".into()));
        }
        if m.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Data("moments must be positive and finite".into()));
        }
        if m.len() >= 2 && m[1] < m[0] * m[0] * (1.0 - 1e-12) {
            return Err(Error::Data("second moment below squared mean".into()));
        }
        Ok(Self(m))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `k`-th raw moment, 1-based.
    pub fn get(&self, k: usize) -> f64 {
        self.0[k - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Moments of `c·X`: `m^k · c^k`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut f = 1.0;
        Self(
            self.0
                .iter()
                .map(|m| {
                    f *= c;
                    m * f
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub mean: f64,
    pub scv: f64,
    pub skewness: f64,
    /// Non-excess kurtosis (exponential: 9).
    pub kurtosis: f64,
}

impl ShapeStats {
    /// Central-moment formulas from the first four raw moments.
    pub fn from_moments(m: &MomentVector) -> Self {
        let (m1, m2, m3, m4) = (m.get(1), m.get(2), m.get(3), m.get(4));
        let var = m2 - m1 * m1;
        let mu3 = m3 - 3.0 * m1 * m2 + 2.0 * m1.powi(3);
        let mu4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
        Self {
            mean: m1,
            scv: var / (m1 * m1),
            skewness: mu3 / var.powf(1.5),
            kurtosis: mu4 / (var * var),
        }
    }
}

enum Sojourn {
    Exp(f64),
    Gamma(Gamma<f64>),
}

enum After {
    Exit,
    Goto(usize),
    Jump { cum: Vec<f64>, dest: Vec<usize> },
}

struct Step {
    sojourn: Sojourn,
    after: After,
}

const EXIT: usize = usize::MAX;

/// Plays the absorbing chain. Runs of forced same-rate transitions (Erlang
/// blocks) are collapsed into a single Gamma draw, which has the same law as
/// the sum of their exponential sojourns.
pub struct PhSampler {
    init: Option<(Vec<f64>, Vec<usize>)>,
    first: usize,
    steps: Vec<Step>,
}

impl PhSampler {
    fn new(ph: &PhaseTypeDist) -> Self {
        let p = ph.order();
        let exits = ph.exit_rates();
        let rates: Vec<f64> = (0..p).map(|i| -ph.t[i][i]).collect();

        // Outgoing branches of each phase: (destination, rate).
        let branches: Vec<Vec<(usize, f64)>> = (0..p)
            .map(|i| {
                let mut b: Vec<(usize, f64)> = (0..p)
                    .filter(|&j| j != i && ph.t[i][j] > 0.0)
                    .map(|j| (j, ph.t[i][j]))
                    .collect();
                if exits[i] > 0.0 {
                    b.push((EXIT, exits[i]));
                }
                b
            })
            .collect();

        let steps = (0..p)
            .map(|i| {
                let rate = rates[i];
                let mut j = i;
                let mut visits = 1usize;
                let after = loop {
                    match branches[j].as_slice() {
                        [(EXIT, _)] => break After::Exit,
                        [(d, _)] if rates[*d] == rate && visits < p => {
                            j = *d;
                            visits += 1;
                        }
                        [(d, _)] => break After::Goto(*d),
                        many => {
                            let mut acc = 0.0;
                            let cum = many
                                .iter()
                                .map(|&(_, r)| {
                                    acc += r;
                                    acc
                                })
                                .collect();
                            break After::Jump {
                                cum,
                                dest: many.iter().map(|b| b.0).collect(),
                            };
                        }
                    }
                };
                let sojourn = if visits == 1 {
                    Sojourn::Exp(rate)
                } else {
                    Sojourn::Gamma(Gamma::new(visits as f64, 1.0 / rate).expect("positive shape and scale"))
                };
                Step { sojourn, after }
            })
            .collect();

        let nonzero: Vec<usize> = (0..p).filter(|&i| ph.alpha[i] > 0.0).collect();
        let (init, first) = if nonzero.len() == 1 {
            (None, nonzero[0])
        } else {
            let mut acc = 0.0;
            let cum = nonzero
                .iter()
                .map(|&i| {
                    acc += ph.alpha[i];
                    acc
                })
                .collect();
            (Some((cum, nonzero)), 0)
        };
        Self { init, first, steps }
    }

    fn pick(cum: &[f64], dest: &[usize], u: f64) -> usize {
        let x = u * cum[cum.len() - 1];
        let k = cum.partition_point(|&c| c <= x).min(cum.len() - 1);
        dest[k]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut phase = match &self.init {
            None => self.first,
            Some((cum, dest)) => Self::pick(cum, dest, rng.random::<f64>()),
        };
        let mut total = 0.0;
        loop {
            let step = &self.steps[phase];
            total += match &step.sojourn {
                Sojourn::Exp(rate) => exp_variate(rng, *rate),
                Sojourn::Gamma(g) => g.sample(rng),
            };
            match &step.after {
                After::Exit => return total,
                After::Goto(d) => phase = *d,
                After::Jump { cum, dest } => {
                    let d = Self::pick(cum, dest, rng.random::<f64>());
                    if d == EXIT {
                        return total;
                    }
                    phase = d;
                }
            }
        }
    }
}

/// Relative weights of the structural families drawn by [`sample_ph`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyWeights {
    pub exponential: f64,
    pub erlang: f64,
    pub hyperexponential: f64,
    pub coxian: f64,
    pub erlang_mixture: f64,
    pub dense: f64,
}

impl Default for FamilyWeights {
    fn default() -> Self {
        Self {
            exponential: 1.0,
            erlang: 1.0,
            hyperexponential: 1.0,
            coxian: 1.0,
            erlang_mixture: 1.0,
            dense: 1.0,
        }
    }
}

impl FamilyWeights {
    pub fn only(family: Family) -> Self {
        let mut w = Self {
            exponential: 0.0,
            erlang: 0.0,
            hyperexponential: 0.0,
            coxian: 0.0,
            erlang_mixture: 0.0,
            dense: 0.0,
        };
        *w.get_mut(family) = 1.0;
        w
    }

    fn get_mut(&mut self, f: Family) -> &mut f64 {
        match f {
            Family::Exponential => &mut self.exponential,
            Family::Erlang => &mut self.erlang,
            Family::Hyperexponential => &mut self.hyperexponential,
            Family::Coxian => &mut self.coxian,
            Family::ErlangMixture => &mut self.erlang_mixture,
            Family::Dense => &mut self.dense,
        }
    }

    fn get(&self, f: Family) -> f64 {
        let mut c = *self;
        *c.get_mut(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Exponential,
    Erlang,
    Hyperexponential,
    Coxian,
    ErlangMixture,
    Dense,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Exponential,
        Family::Erlang,
        Family::Hyperexponential,
        Family::Coxian,
        Family::ErlangMixture,
        Family::Dense,
    ];

    fn min_order(self) -> usize {
        match self {
            Family::Exponential => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhGenConfig {
    pub weights: FamilyWeights,
    pub max_order: usize,
    /// Draws with a smaller SCV are rejected.
    pub min_scv: f64,
    /// Draws with a larger SCV are rejected.
    pub max_scv: f64,
    pub max_attempts: usize,
}

impl Default for PhGenConfig {
    fn default() -> Self {
        Self {
            weights: FamilyWeights::default(),
            max_order: MAX_ORDER,
            min_scv: 1e-4,
            max_scv: 50.0,
            max_attempts: 10_000,
        }
    }
}

impl PhGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_ORDER).contains(&self.max_order) {
            return Err(Error::Config(format!("max_order {} outside 1..={MAX_ORDER}", self.max_order)));
        }
        let usable = Family::ALL
            .iter()
            .map(|&f| (f, self.weights.get(f)))
            .collect::<Vec<_>>();
        if usable.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("family weights must be nonnegative".into()));
        }
        if !usable
            .iter()
            .any(|(f, w)| *w > 0.0 && f.min_order() <= self.max_order)
        {
            return Err(Error::Config("no family with positive weight fits max_order".into()));
        }
        if !(self.min_scv < self.max_scv) {
            return Err(Error::Config("min_scv must be below max_scv".into()));
        }
        Ok(())
    }

    fn pick_family<R: Rng + ?Sized>(&self, rng: &mut R) -> Family {
        let cands: Vec<(Family, f64)> = Family::ALL
            .iter()
            .map(|&f| (f, self.weights.get(f)))
            .filter(|(f, w)| *w > 0.0 && f.min_order() <= self.max_order)
            .collect();
        let total: f64 = cands.iter().map(|c| c.1).sum();
        let mut x = rng.random::<f64>() * total;
        for &(f, w) in &cands {
            if x < w {
                return f;
            }
            x -= w;
        }
        cands[cands.len() - 1].0
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Integer log-uniform on `lo..=hi`.
fn log_uniform_int<R: Rng + ?Sized>(rng: &mut R, lo: usize, hi: usize) -> usize {
    if lo >= hi {
        return lo;
    }
    (log_uniform(rng, lo as f64, hi as f64 + 1.0).floor() as usize).clamp(lo, hi)
}

fn dirichlet_flat<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -open01(rng).ln()).collect();
    let s: f64 = w.iter().sum();
    let mut out: Vec<f64> = w.iter().map(|x| x / s).collect();
    // exact unit sum
    let head: f64 = out[..n - 1].iter().sum();
    out[n - 1] = (1.0 - head).max(0.0);
    out
}

fn draw_family<R: Rng + ?Sized>(family: Family, max_order: usize, rng: &mut R) -> Result<PhaseTypeDist> {
    match family {
        Family::Exponential => PhaseTypeDist::exponential(log_uniform(rng, 0.1, 10.0)),
        Family::Erlang => {
            let k = log_uniform_int(rng, 2, max_order);
            PhaseTypeDist::erlang(k, k as f64 * log_uniform(rng, 0.1, 10.0))
        }
        Family::Hyperexponential => {
            let b = rng.random_range(2..=max_order.min(10));
            let probs = dirichlet_flat(rng, b);
            let rates: Vec<f64> = (0..b).map(|_| log_uniform(rng, 0.01, 100.0)).collect();
            PhaseTypeDist::hyperexponential(&probs, &rates)
        }
        Family::Coxian => {
            let n = rng.random_range(2..=max_order.min(50));
            let rates: Vec<f64> = (0..n).map(|_| log_uniform(rng, 0.03, 30.0)).collect();
            let cont: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>().sqrt()).collect();
            PhaseTypeDist::coxian(&rates, &cont)
        }
        Family::ErlangMixture => {
            let c = rng.random_range(2..=max_order.min(5));
            let cap = (max_order / c).clamp(1, 100);
            let weights = dirichlet_flat(rng, c);
            let blocks: Vec<(usize, f64)> = (0..c)
                .map(|_| {
                    let k = log_uniform_int(rng, 1, cap);
                    (k, k as f64 / log_uniform(rng, 0.03, 30.0))
                })
                .collect();
            PhaseTypeDist::erlang_mixture(&weights, &blocks)
        }
        Family::Dense => {
            let n = rng.random_range(2..=max_order.min(20));
            let mut t = vec![vec![0.0; n]; n];
            for (i, row) in t.iter_mut().enumerate() {
                let mut w = vec![0.0; n + 1];
                for (j, wj) in w.iter_mut().enumerate().take(n) {
                    if j != i && rng.random::<f64>() < 0.3 {
                        *wj = rng.random::<f64>();
                    }
                }
                if rng.random::<f64>() < 0.5 {
                    w[n] = rng.random::<f64>();
                }
                let total: f64 = w.iter().sum();
                if total == 0.0 {
                    w[n] = 1.0;
                }
                let total: f64 = w.iter().sum();
                let rate = log_uniform(rng, 0.01, 100.0);
                for j in 0..n {
                    if j != i {
                        row[j] = rate * w[j] / total;
                    }
                }
                row[i] = -rate;
            }
            PhaseTypeDist::new(dirichlet_flat(rng, n), t)
        }
    }
}

/// Draws a random PH from the configured family mixture.
///
/// Candidates that fail validation, are numerically degenerate, or fall
/// outside `[min_scv, max_scv]` or a mean of `[1e-6, 1e6]` are redrawn.
pub fn sample_ph<R: Rng + ?Sized>(cfg: &PhGenConfig, rng: &mut R) -> Result<PhaseTypeDist> {
    cfg.validate()?;
    for _ in 0..cfg.max_attempts {
        let family = cfg.pick_family(rng);
        let Ok(ph) = draw_family(family, cfg.max_order, rng) else {
            continue;
        };
        let Ok(m) = ph.moments(2) else { continue };
        let mean = m.get(1);
        let scv = m.get(2) / (mean * mean) - 1.0;
        if (1e-6..=1e6).contains(&mean) && scv >= cfg.min_scv && scv <= cfg.max_scv {
            return Ok(ph);
        }
    }
    Err(Error::Config(format!(
        "no acceptable PH after {} attempts",
        cfg.max_attempts
    )))
}
