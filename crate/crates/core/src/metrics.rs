//! Accuracy metrics for the surrogate outputs and the per-group report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{group_ranges, segment, RecordView, GROUPS};
use crate::error::{shape_err, Error, Result};
use crate::nn::{predict, ModelBundle, PredictionBundle, Query, PMF_LEN};

/// Instances whose true mean level is at or below this are left out of REM.
pub const REM_MIN_MEAN: f64 = 1e-9;

pub const CSV_HEADER: &str = "group,n,scvD,scvL,rho,S,s,SAE,REM,REc,AEpi0";

fn mean_level(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(i, v)| i as f64 * v).sum()
}

/// L1 distance of two PMFs, the shorter one read as zero-padded.
pub fn l1_padded(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|j| (a.get(j).copied().unwrap_or(0.0) - b.get(j).copied().unwrap_or(0.0)).abs())
        .sum()
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(shape_err(a, b));
    }
    if a == 0 {
        return Err(Error::Data("no instances to score".into()));
    }
    Ok(())
}

/// `(1/N) Σ_i Σ_j |P_ij − P̂_ij|`
pub fn sae(p_true: &[Vec<f64>], p_hat: &[Vec<f64>]) -> Result<f64> {
    check_len(p_true.len(), p_hat.len())?;
    Ok(p_true.iter().zip(p_hat).map(|(a, b)| l1_padded(a, b)).sum::<f64>() / p_true.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rem {
    /// Mean of `100·|E[P] − E[P̂]| / E[P]`.
    pub abs_pct: f64,
    /// Mean of `100·(E[P] − E[P̂]) / E[P]`.
    pub signed_pct: f64,
    pub excluded: usize,
}

pub fn rem(p_true: &[Vec<f64>], p_hat: &[Vec<f64>]) -> Result<Rem> {
    check_len(p_true.len(), p_hat.len())?;
    let (mut abs, mut signed, mut n, mut excluded) = (0.0, 0.0, 0usize, 0usize);
    for (a, b) in p_true.iter().zip(p_hat) {
        let m = mean_level(a);
        if m <= REM_MIN_MEAN {
            excluded += 1;
            continue;
        }
        let r = 100.0 * (m - mean_level(b)) / m;
        abs += r.abs();
        signed += r;
        n += 1;
    }
    if excluded > 0 {
        log::debug!("REM: {excluded} instances with mean level <= {REM_MIN_MEAN} excluded");
    }
    let div = |x: f64| if n == 0 { f64::NAN } else { x / n as f64 };
    Ok(Rem { abs_pct: div(abs), signed_pct: div(signed), excluded })
}

/// Mean of `100·|EC − ÊC| / EC`.
pub fn re_c(ec_true: &[f64], ec_hat: &[f64]) -> Result<f64> {
    check_len(ec_true.len(), ec_hat.len())?;
    if ec_true.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Data("true EC must be positive".into()));
    }
    Ok(ec_true.iter().zip(ec_hat).map(|(t, h)| 100.0 * (t - h).abs() / t).sum::<f64>() / ec_true.len() as f64)
}

/// Mean of `|pi0 − pî0|`.
pub fn ae_pi0(pi0_true: &[f64], pi0_hat: &[f64]) -> Result<f64> {
    check_len(pi0_true.len(), pi0_hat.len())?;
    Ok(pi0_true.iter().zip(pi0_hat).map(|(t, h)| (t - h).abs()).sum::<f64>() / pi0_true.len() as f64)
}

/// Truth, prediction, and errors for one test instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: u64,
    pub group: u8,
    pub s: u32,
    #[serde(rename = "S")]
    pub big_s: u32,
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    #[serde(rename = "P_hat")]
    pub p_hat: Vec<f64>,
    #[serde(rename = "EC")]
    pub ec: f64,
    #[serde(rename = "EC_hat")]
    pub ec_hat: f64,
    pub pi0: f64,
    pub pi0_hat: f64,
    pub sae: f64,
    /// Signed percentage error of the mean level; `None` if the true mean is ~0.
    pub rem: Option<f64>,
    pub re_c: f64,
    pub ae_pi0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    /// `"1"`..`"32"` or `"overall"`.
    pub group: String,
    pub n: usize,
    #[serde(rename = "scvD")]
    pub scv_d: String,
    #[serde(rename = "scvL")]
    pub scv_l: String,
    pub rho: String,
    #[serde(rename = "S")]
    pub big_s: String,
    pub s: String,
    #[serde(rename = "SAE")]
    pub sae: Option<f64>,
    #[serde(rename = "REM")]
    pub rem: Option<f64>,
    pub rem_signed: Option<f64>,
    pub rem_excluded: usize,
    #[serde(rename = "REc")]
    pub re_c: Option<f64>,
    #[serde(rename = "REc_median")]
    pub re_c_median: Option<f64>,
    #[serde(rename = "AEpi0")]
    pub ae_pi0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub groups: Vec<GroupReport>,
    pub overall: GroupReport,
}

fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

fn summarize_rows(group: String, ranges: [&str; 5], rows: &[&EvalRow]) -> GroupReport {
    let n = rows.len();
    let mean = |f: &dyn Fn(&EvalRow) -> f64| if n == 0 { None } else { Some(rows.iter().map(|r| f(r)).sum::<f64>() / n as f64) };
    let rems: Vec<f64> = rows.iter().filter_map(|r| r.rem).collect();
    let rem_mean = |f: fn(f64) -> f64| {
        if rems.is_empty() {
            None
        } else {
            Some(rems.iter().map(|&v| f(v)).sum::<f64>() / rems.len() as f64)
        }
    };
    let mut rec: Vec<f64> = rows.iter().map(|r| r.re_c).collect();
    GroupReport {
        group,
        n,
        scv_d: ranges[0].into(),
        scv_l: ranges[1].into(),
        rho: ranges[2].into(),
        big_s: ranges[3].into(),
        s: ranges[4].into(),
        sae: mean(&|r| r.sae),
        rem: rem_mean(f64::abs),
        rem_signed: rem_mean(|v| v),
        rem_excluded: n - rems.len(),
        re_c: mean(&|r| r.re_c),
        re_c_median: median(&mut rec),
        ae_pi0: mean(&|r| r.ae_pi0),
    }
}

/// Scores predictions against labelled test records, grouped by segment.
pub fn evaluate_predictions(views: &[RecordView], preds: &[PredictionBundle]) -> Result<(EvalReport, Vec<EvalRow>)> {
    check_len(views.len(), preds.len())?;
    let mut rows = Vec::with_capacity(views.len());
    for (v, p) in views.iter().zip(preds) {
        let lab = v.labels()?;
        let m = &v.meta;
        let group = segment(m.scv_d, m.scv_l, m.rho, v.big_s, v.s);
        let mt = lab.mean_level();
        rows.push(EvalRow {
            id: v.id,
            group,
            s: v.s,
            big_s: v.big_s,
            p: lab.p.clone(),
            p_hat: p.p_hat.clone(),
            ec: lab.ec,
            ec_hat: p.ec_hat,
            pi0: lab.pi0,
            pi0_hat: p.pi0_hat,
            sae: l1_padded(&lab.p, &p.p_hat),
            rem: (mt > REM_MIN_MEAN).then(|| 100.0 * (mt - mean_level(&p.p_hat)) / mt),
            re_c: 100.0 * (lab.ec - p.ec_hat).abs() / lab.ec,
            ae_pi0: (lab.pi0 - p.pi0_hat).abs(),
        });
    }
    let groups = (1..=GROUPS)
        .map(|g| {
            let r = group_ranges(g);
            let members: Vec<&EvalRow> = rows.iter().filter(|x| x.group == g).collect();
            summarize_rows(g.to_string(), [r.scv_d, r.scv_l, r.rho, r.big_s, r.s], &members)
        })
        .collect();
    let all: Vec<&EvalRow> = rows.iter().collect();
    let overall = summarize_rows("overall".into(), ["all"; 5], &all);
    Ok((EvalReport { groups, overall }, rows))
}

/// Runs the three networks on `views` and scores them.
pub fn evaluate(bundle: &ModelBundle, views: &[RecordView]) -> Result<(EvalReport, Vec<EvalRow>)> {
    let queries: Vec<Query> = views.iter().map(Query::from_view).collect();
    let preds = predict(bundle, &queries)?;
    evaluate_predictions(views, &preds)
}

/// Uniform PMF on `0..=S`, `EC = (S − s)(1 + ρ)`, `pi0 = 0`; assumes mean-one demand.
pub fn naive_baseline(views: &[RecordView]) -> Vec<PredictionBundle> {
    views
        .iter()
        .map(|v| {
            let mut p_hat = vec![0.0; PMF_LEN.max(v.big_s as usize + 1)];
            let w = 1.0 / (v.big_s as f64 + 1.0);
            p_hat[..=v.big_s as usize].iter_mut().for_each(|x| *x = w);
            PredictionBundle { p_hat, ec_hat: (v.big_s - v.s) as f64 * (1.0 + v.meta.rho), pi0_hat: 0.0 }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for g in self.groups.iter().chain(std::iter::once(&self.overall)) {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                g.group,
                g.n,
                g.scv_d,
                g.scv_l,
                g.rho,
                g.big_s,
                g.s,
                opt(g.sae),
                opt(g.rem),
                opt(g.re_c),
                opt(g.ae_pi0)
            )
            .expect("write to String");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
