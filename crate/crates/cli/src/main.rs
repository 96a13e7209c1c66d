use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use invnet_core::dataset::{self, FeatureLayout, GenConfig, RecordView};
use invnet_core::jsonl::{self, JsonlReader, JsonlWriter};
use invnet_core::metrics;
use invnet_core::nn::{self, MlpModel, ModelBundle, PredictionBundle, Query, Target, TrainConfig, TrainingData};
use invnet_core::optimize::{self, Backend, Constraint, CostSpec, CtmcBackend, NnBackend, SimBackend};
use invnet_core::phdist::PhaseTypeDist;
use invnet_core::simulate::{self, SimConfig};

#[derive(Parser)]
#[command(name = "invnet", version, about = "Neural surrogates for (s, S) lost-sales inventory systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw random system instances (unlabelled records).
    Gen(GenArgs),
    /// Label records by discrete-event simulation.
    Simulate(SimulateArgs),
    /// Exact stationary measures for the tractable special cases.
    Oracle(OracleArgs),
    /// Train one network.
    Train(TrainArgs),
    /// Score a model directory on a labelled test file.
    Eval(EvalArgs),
    /// Run the three networks on one instance or a file of instances.
    Predict(PredictArgs),
    /// Search the (s, S) grid for the cheapest policy.
    Optimize(OptimizeArgs),
    /// Retrain the PMF network for several moment counts.
    Ablate(AblateArgs),
    /// Summarize a dataset file.
    Stats(StatsArgs),
}

#[derive(Args, Serialize)]
struct GenArgs {
    /// Number of i.i.d. records.
    #[arg(long, required_unless_present = "per_group", conflicts_with = "per_group")]
    n: Option<usize>,
    /// Fill each of the 32 test groups with this many records instead.
    #[arg(long)]
    per_group: Option<usize>,
    #[arg(long, default_value_t = 30)]
    s_max: u32,
    #[arg(long)]
    seed: u64,
    /// Id of the first record.
    #[arg(long, default_value_t = 0)]
    first_id: u64,
    /// Draw budget for --per-group (default 5000 per requested record).
    #[arg(long)]
    max_draws: Option<usize>,
    /// JSON generator config (fields of GenConfig).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Demand arrivals per instance; accepts forms like 1e7.
    #[arg(long, value_parser = parse_count)]
    arrivals: u64,
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
    #[arg(long)]
    seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 512)]
    chunk: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum OracleKind {
    Mm,
    Zerolead,
}

#[derive(Args, Serialize)]
struct OracleArgs {
    #[arg(long, value_enum)]
    kind: OracleKind,
    #[arg(long)]
    s: u32,
    #[arg(long = "S")]
    big_s: u32,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    md1: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    target: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Moments of each distribution used as features.
    #[arg(long, default_value_t = 5)]
    moments: usize,
    /// JSON file with TrainConfig fields; missing fields take the target's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Per-epoch losses as JSON lines.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// CSV report, one row per group plus `overall`.
    #[arg(long)]
    report: PathBuf,
    /// Per-instance truth and predictions (default: `<report>.rows.jsonl`).
    #[arg(long)]
    intermediates: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long = "in", conflicts_with_all = ["s", "big_s", "mom_d", "mom_l"])]
    #[serde(rename = "in")]
    input: Option<PathBuf>,
    #[arg(long, required_unless_present = "input")]
    s: Option<u32>,
    #[arg(long = "S", required_unless_present = "input")]
    big_s: Option<u32>,
    #[arg(long, num_args = 1.., required_unless_present = "input")]
    mom_d: Vec<f64>,
    #[arg(long, num_args = 1.., required_unless_present = "input")]
    mom_l: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq)]
enum BackendKind {
    Nn,
    Sim,
    Ctmc,
}

#[derive(Args, Serialize)]
struct OptimizeArgs {
    #[arg(long, value_enum, default_value = "nn")]
    backend: BackendKind,
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    mom_d: Vec<f64>,
    #[arg(long, num_args = 1..)]
    mom_l: Vec<f64>,
    /// Demand PH as JSON {"alpha","T"} (sim backend).
    #[arg(long)]
    ph_d: Option<PathBuf>,
    /// Lead-time PH as JSON {"alpha","T"} (sim backend).
    #[arg(long)]
    ph_l: Option<PathBuf>,
    /// Exponential demand rate (ctmc backend).
    #[arg(long)]
    lambda: Option<f64>,
    /// Exponential lead-time rate (ctmc backend).
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, value_parser = parse_count, default_value = "1000000")]
    arrivals: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    ko: f64,
    #[arg(long)]
    cr: f64,
    #[arg(long)]
    ch: f64,
    #[arg(long)]
    cl: f64,
    /// Mean demand interarrival time; inferred from the backend inputs when omitted.
    #[arg(long)]
    md1: Option<f64>,
    /// Service constraint `k:prob`, meaning P(I >= k) >= prob.
    #[arg(long)]
    constraint: Option<String>,
    #[arg(long, default_value_t = 30)]
    s_max: u32,
    /// Grid CSV (`s,S,g,feasible`); the JSON summary goes to stdout and `<out>.summary.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    moments_list: Vec<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// CSV `moments,val_sae,best_val_loss,epochs_run,best_epoch`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

/// Accepts plain integers and float notation such as `1e7`.
fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    let x: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(63) {
        Ok(x as u64)
    } else {
        Err(format!("{s:?} is not a nonnegative integer"))
    }
}

#[derive(Serialize)]
struct RunManifest<'a, T: Serialize> {
    command: &'a str,
    config: &'a T,
    seed: Option<u64>,
    version: &'static str,
    started_unix: f64,
    finished_unix: f64,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_manifest<T: Serialize>(out: &Path, command: &str, config: &T, seed: Option<u64>, started: f64) -> Result<()> {
    let m = RunManifest {
        command,
        config,
        seed,
        version: concat!("invnet ", env!("CARGO_PKG_VERSION")),
        started_unix: started,
        finished_unix: unix_now(),
    };
    let path = sidecar(out, ".manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_views(path: &Path) -> Result<Vec<RecordView>> {
    jsonl::read_all(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut cfg: GenConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    cfg.s_max = a.s_max;
    ensure!(a.s_max <= nn::MAX_S, "--s-max must be at most {}", nn::MAX_S);
    let mut w = JsonlWriter::create(&a.out)?;
    let written = if let Some(per_group) = a.per_group {
        let budget = a.max_draws.unwrap_or(5_000 * per_group * dataset::GROUPS as usize);
        let recs = dataset::generate_test_records(a.seed, per_group, a.first_id, &cfg, budget)?;
        for r in &recs {
            w.write(r)?;
        }
        recs.len()
    } else {
        let n = a.n.expect("clap enforces one of --n/--per-group") as u64;
        let mut start = a.first_id;
        let end = a.first_id + n;
        while start < end {
            let stop = (start + 512).min(end);
            for r in dataset::generate_records(a.seed, start..stop, &cfg)? {
                w.write(&r)?;
            }
            start = stop;
        }
        n as usize
    };
    w.finish()?;
    log::info!("wrote {written} records to {}", a.out.display());
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let sim = SimConfig { n_arrivals: a.arrivals, warmup_frac: a.warmup, seed: a.seed };
    sim.validate()?;
    ensure!(a.chunk > 0, "--chunk must be positive");
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = a.workers {
        ensure!(w > 0, "--workers must be positive");
        pool = pool.num_threads(w);
    }
    let pool = pool.build()?;
    let t = Instant::now();
    let n = pool.install(|| dataset::label_file(&a.input, &a.out, &sim, a.chunk))?;
    log::info!("labelled {n} records in {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> Result<()> {
    let labels = match a.kind {
        OracleKind::Mm => {
            let (Some(l), Some(m)) = (a.lambda, a.mu) else { bail!("--kind mm needs --lambda and --mu") };
            simulate::ctmc_oracle(a.s, a.big_s, l, m)?
        }
        OracleKind::Zerolead => {
            let md1 = a.md1.context("--kind zerolead needs --md1")?;
            simulate::zero_lead_oracle(a.s, a.big_s, md1)?
        }
    };
    let text = jsonl::to_string(&labels)? + "\n";
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn train_config(path: Option<&Path>, target: Target, seed: Option<u64>, epochs: Option<usize>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::for_target(target);
    if let Some(p) = path {
        // Overlay the file on the target's defaults.
        let mut base = serde_json::to_value(&cfg)?;
        let over: serde_json::Value = read_json(p)?;
        let obj = over.as_object().context("config must be a JSON object")?;
        for (k, v) in obj {
            base[k] = v.clone();
        }
        cfg = serde_json::from_value(base).with_context(|| format!("config {}", p.display()))?;
        ensure!(cfg.target == target, "config target {:?} disagrees with --target {:?}", cfg.target, target);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.max_epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<u64> {
    let target: Target = a.target.parse()?;
    let cfg = train_config(a.config.as_deref(), target, a.seed, a.epochs)?;
    let layout = FeatureLayout::symmetric(a.moments);
    let train = TrainingData::from_views(&load_views(&a.data)?, layout, target, cfg.log_target)?;
    let val = TrainingData::from_views(&load_views(&a.val)?, layout, target, cfg.log_target)?;
    let model = MlpModel::for_target(target, layout, &cfg.hidden, cfg.seed)?;
    let t = Instant::now();
    let out = nn::train(model, &train, &val, &cfg)?;
    let meta = &out.model.meta;
    log::info!(
        "{}: {} epochs in {:.1}s, best val loss {:.6} at epoch {}",
        target.name(),
        meta.epochs_run,
        t.elapsed().as_secs_f64(),
        meta.best_val_loss,
        meta.best_epoch
    );
    out.model.save(&a.out)?;
    if let Some(h) = &a.history {
        jsonl::write_all(h, &out.history)?;
    }
    Ok(cfg.seed)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let bundle = ModelBundle::load_dir(&a.models)?;
    let views = load_views(&a.test)?;
    let (report, rows) = metrics::evaluate(&bundle, &views)?;
    report.write_csv(&a.report)?;
    let rows_path = a.intermediates.clone().unwrap_or_else(|| sidecar(&a.report, ".rows.jsonl"));
    jsonl::write_all(&rows_path, &rows)?;
    println!("{}", serde_json::to_string_pretty(&report.overall)?);
    Ok(())
}

#[derive(Deserialize)]
struct QueryLine {
    id: Option<u64>,
    #[serde(flatten)]
    query: Query,
}

#[derive(Serialize)]
struct PredictionLine {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    #[serde(flatten)]
    pred: PredictionBundle,
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let bundle = ModelBundle::load_dir(&a.models)?;
    let (ids, queries): (Vec<Option<u64>>, Vec<Query>) = match &a.input {
        Some(p) => {
            let mut r = JsonlReader::open(p)?;
            let mut out = Vec::new();
            while let Some(line) = r.next_item::<QueryLine>() {
                let line = line?;
                out.push((line.id, line.query));
            }
            out.into_iter().unzip()
        }
        None => (
            vec![None],
            vec![Query {
                s: a.s.expect("required by clap"),
                big_s: a.big_s.expect("required by clap"),
                mom_d: a.mom_d.clone(),
                mom_l: a.mom_l.clone(),
            }],
        ),
    };
    let t = Instant::now();
    let preds = nn::predict(&bundle, &queries)?;
    log::info!("predicted {} instances in {:.3}s", preds.len(), t.elapsed().as_secs_f64());
    let mut buf = Vec::new();
    {
        let mut w = JsonlWriter::new(&mut buf);
        for (id, pred) in ids.into_iter().zip(preds) {
            w.write(&PredictionLine { id, pred })?;
        }
        w.finish()?;
    }
    match &a.out {
        Some(p) => write_text(p, std::str::from_utf8(&buf)?),
        None => {
            print!("{}", std::str::from_utf8(&buf)?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct OptimizeSummary {
    backend: &'static str,
    unconstrained: optimize::Optimum,
    constrained: Option<optimize::Optimum>,
    infeasible: bool,
    pairs: usize,
    wall_ms: f64,
}

fn check_md1(given: Option<f64>, implied: f64) -> Result<f64> {
    match given {
        Some(m) => {
            ensure!(
                (m - implied).abs() <= 1e-9 * implied.abs(),
                "--md1 {m} disagrees with the demand mean {implied} implied by the inputs"
            );
            Ok(m)
        }
        None => Ok(implied),
    }
}

fn cmd_optimize(a: &OptimizeArgs) -> Result<()> {
    let constraint = a.constraint.as_deref().map(str::parse::<Constraint>).transpose()?;
    let bundle;
    let (backend, md1): (Box<dyn Backend + '_>, f64) = match a.backend {
        BackendKind::Nn => {
            let dir = a.models.as_ref().context("the nn backend needs --models")?;
            ensure!(!a.mom_d.is_empty() && !a.mom_l.is_empty(), "the nn backend needs --mom-d and --mom-l");
            bundle = ModelBundle::load_dir(dir)?;
            let md1 = check_md1(a.md1, a.mom_d[0])?;
            (Box::new(NnBackend { bundle: &bundle, mom_d: a.mom_d.clone(), mom_l: a.mom_l.clone() }), md1)
        }
        BackendKind::Sim => {
            let demand: PhaseTypeDist = read_json(a.ph_d.as_deref().context("the sim backend needs --ph-d")?)?;
            let lead: PhaseTypeDist = read_json(a.ph_l.as_deref().context("the sim backend needs --ph-l")?)?;
            let md1 = check_md1(a.md1, demand.mean()?)?;
            let cfg = SimConfig::new(a.arrivals, a.seed);
            (Box::new(SimBackend { demand, lead, cfg }), md1)
        }
        BackendKind::Ctmc => {
            let (Some(lambda), Some(mu)) = (a.lambda, a.mu) else { bail!("the ctmc backend needs --lambda and --mu") };
            ensure!(lambda > 0.0, "--lambda must be positive");
            (Box::new(CtmcBackend { lambda, mu }), check_md1(a.md1, 1.0 / lambda)?)
        }
    };
    let spec = CostSpec { k_o: a.ko, c_r: a.cr, c_h: a.ch, c_l: a.cl, m_d1: md1 };
    let res = optimize::grid_optimize(backend.as_ref(), &spec, constraint.as_ref(), a.s_max)?;
    write_text(&a.out, &res.to_csv())?;
    let summary = OptimizeSummary {
        backend: backend.name(),
        unconstrained: res.unconstrained,
        constrained: res.constrained,
        infeasible: res.infeasible,
        pairs: res.table.len(),
        wall_ms: res.wall_ms,
    };
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    write_text(&sidecar(&a.out, ".summary.json"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let cfg = train_config(a.config.as_deref(), Target::Pmf, a.seed, a.epochs)?;
    let train = load_views(&a.data)?;
    let val = load_views(&a.val)?;
    let pts = nn::ablate(&train, &val, &a.moments_list, &cfg)?;
    let mut csv = String::from("moments,val_sae,best_val_loss,epochs_run,best_epoch\n");
    for p in &pts {
        csv.push_str(&format!("{},{},{},{},{}\n", p.moments, p.val_sae, p.best_val_loss, p.epochs_run, p.best_epoch));
    }
    write_text(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let views = load_views(&a.input)?;
    println!("{}", serde_json::to_string_pretty(&dataset::summarize(&views))?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let started = unix_now();
    match &cli.command {
        Command::Gen(a) => {
            cmd_gen(a)?;
            write_manifest(&a.out, "gen", a, Some(a.seed), started)
        }
        Command::Simulate(a) => {
            cmd_simulate(a)?;
            write_manifest(&a.out, "simulate", a, Some(a.seed), started)
        }
        Command::Oracle(a) => cmd_oracle(a),
        Command::Train(a) => {
            let seed = cmd_train(a)?;
            write_manifest(&a.out, "train", a, Some(seed), started)
        }
        Command::Eval(a) => {
            cmd_eval(a)?;
            write_manifest(&a.report, "eval", a, None, started)
        }
        Command::Predict(a) => {
            cmd_predict(a)?;
            match &a.out {
                Some(o) => write_manifest(o, "predict", a, None, started),
                None => Ok(()),
            }
        }
        Command::Optimize(a) => {
            cmd_optimize(a)?;
            write_manifest(&a.out, "optimize", a, Some(a.seed), started)
        }
        Command::Ablate(a) => {
            cmd_ablate(a)?;
            write_manifest(&a.out, "ablate", a, a.seed, started)
        }
        Command::Stats(a) => cmd_stats(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

