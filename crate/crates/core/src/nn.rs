//! Fully connected feedforward networks trained from scratch.
//!
//! Three heads cover the three surrogate targets: a softmax over the 31
//! inventory levels, a linear scalar for the mean cycle time, and a sigmoid
//! scalar for the fulfillment probability. Hidden layers use ReLU. Inputs are
//! standardized with statistics of the training set, which are stored in the
//! checkpoint together with the weights.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{preprocess_features, FeatureLayout, RecordView};
use crate::error::{shape_err, Error, Result};
use crate::jsonl;
use crate::phdist::MomentVector;
use crate::rng::{substream, Stream};

/// Length of the padded PMF vector, levels `0..=MAX_S`.
pub const PMF_LEN: usize = 31;
pub const MAX_S: u32 = 30;
pub const SIGMOID_CLAMP: f64 = 1e-7;
/// Lower bound on predicted cycle times (mean-one units); keeps costs finite.
pub const EC_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Softmax,
    Linear,
    Sigmoid,
}

impl Head {
    pub fn default_loss(self) -> Loss {
        match self {
            Head::Softmax => Loss::L1,
            Head::Linear | Head::Sigmoid => Loss::Mse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `(1/B) Σ_i Σ_j |y_ij − ŷ_ij|`
    L1,
    /// `(1/B) Σ_i Σ_j (y_ij − ŷ_ij)²`
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Stationary inventory PMF.
    Pmf,
    /// Mean time between replenishments.
    Cycle,
    /// Fulfillment probability `1 − pi0`.
    Fulfill,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Pmf, Target::Cycle, Target::Fulfill];

    pub fn head(self) -> Head {
        match self {
            Target::Pmf => Head::Softmax,
            Target::Cycle => Head::Linear,
            Target::Fulfill => Head::Sigmoid,
        }
    }

    pub fn output_dim(self) -> usize {
        match self {
            Target::Pmf => PMF_LEN,
            Target::Cycle | Target::Fulfill => 1,
        }
    }

    pub fn default_hidden(self) -> Vec<usize> {
        match self {
            Target::Pmf => vec![50, 70, 100, 90, 60],
            Target::Cycle => vec![50, 70, 70, 60, 50],
            Target::Fulfill => vec![50, 70, 70, 60, 10],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Pmf => "pmf",
            Target::Cycle => "cycle",
            Target::Fulfill => "fulfill",
        }
    }

    /// Checkpoint file name inside a model directory.
    pub fn file_name(self) -> String {
        format!("{}.json", self.name())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pmf" => Ok(Target::Pmf),
            "cycle" => Ok(Target::Cycle),
            "fulfill" => Ok(Target::Fulfill),
            other => Err(Error::Config(format!("unknown target {other:?} (pmf|cycle|fulfill)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub target: Target,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub stop_window: usize,
    pub stop_threshold: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Train the linear head on `ln EC` instead of `EC`.
    pub log_target: bool,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_target(Target::Pmf)
    }
}

impl TrainConfig {
    pub fn for_target(target: Target) -> Self {
        Self {
            target,
            hidden: target.default_hidden(),
            lr: 1e-3,
            batch_size: 128,
            weight_decay: 1e-5,
            max_epochs: 1000,
            stop_window: 50,
            stop_threshold: 1e-5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            log_target: false,
            standardize: true,
        }
    }

    /// Bounds follow the hyperparameter search space the defaults came from,
    /// loosened to intervals so small test nets still qualify.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr <= 0.05) {
            return bad(format!("lr {} outside (0, 0.05]", self.lr));
        }
        if self.batch_size == 0 || self.batch_size > 4096 {
            return bad(format!("batch size {} outside 1..=4096", self.batch_size));
        }
        if !(0.0..=1e-4).contains(&self.weight_decay) {
            return bad(format!("weight decay {} outside [0, 1e-4]", self.weight_decay));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.stop_window == 0 || !(self.stop_threshold >= 0.0) {
            return bad("early-stop window must be positive and threshold nonnegative".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden layers {:?} must be non-empty and positive", self.hidden));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps be positive".into());
        }
        if self.log_target && self.target != Target::Cycle {
            return bad("log_target only applies to the cycle target".into());
        }
        Ok(())
    }

    pub fn hash_hex(&self) -> String {
        let text = jsonl::to_string(self).expect("config serializes");
        // FNV-1a
        let h = text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        });
        format!("{h:016x}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `(out, in)`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Checkpoint", try_from = "Checkpoint")]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    pub head: Head,
    layers: Vec<Layer>,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    /// Linear head only: `y = output_scale · z + output_shift`.
    output_shift: f64,
    output_scale: f64,
    /// Linear head only: the network predicts `ln y`.
    log_output: bool,
    pub feature_layout: Option<FeatureLayout>,
    pub train_config: Option<TrainConfig>,
    pub meta: TrainMeta,
}

/// Weight initialization: `U(−a, a)` with `a = √(6/fan_in)` for layers feeding
/// a ReLU and `a = √(1/fan_in)` for the output layer; biases start at zero.
pub fn init_mlp(layer_sizes: &[usize], head: Head, seed: u64) -> Result<MlpModel> {
    if layer_sizes.len() < 3 {
        return Err(Error::Config(format!(
            "need input, at least one hidden layer, and output; got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!("zero-width layer in {layer_sizes:?}")));
    }
    let out = *layer_sizes.last().unwrap();
    match head {
        Head::Softmax if out < 2 => return Err(Error::Config("softmax head needs ≥ 2 outputs".into())),
        Head::Linear | Head::Sigmoid if out != 1 => {
            return Err(Error::Config(format!("{head:?} head has one output, got {out}")))
        }
        _ => {}
    }
    let mut rng = substream(seed, Stream::Init, 0);
    let n = layer_sizes.len() - 1;
    let layers = (0..n)
        .map(|i| {
            let (fan_in, fan_out) = (layer_sizes[i], layer_sizes[i + 1]);
            let a = if i + 1 < n { (6.0 / fan_in as f64).sqrt() } else { (1.0 / fan_in as f64).sqrt() };
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-a..a));
            Layer { w, b: Array1::zeros(fan_out) }
        })
        .collect();
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        head,
        layers,
        input_shift: vec![0.0; layer_sizes[0]],
        input_scale: vec![1.0; layer_sizes[0]],
        output_shift: 0.0,
        output_scale: 1.0,
        log_output: false,
        feature_layout: None,
        train_config: None,
        meta: TrainMeta::default(),
    })
}

/// Per-layer gradients, same shapes as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

struct Cache {
    /// `acts[0]` is the standardized input, `acts[i]` the i-th hidden activation.
    acts: Vec<Array2<f64>>,
    out: Array2<f64>,
}

impl MlpModel {
    /// Network for `target` on features of `layout`, with the given hidden widths.
    pub fn for_target(target: Target, layout: FeatureLayout, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![layout.dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(target.output_dim());
        let mut m = init_mlp(&sizes, target.head(), seed)?;
        m.feature_layout = Some(layout);
        Ok(m)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn log_output(&self) -> bool {
        self.log_output
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|d| (d[0] + 1) * d[1]).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(shape_err(self.n_params(), flat.len()));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|p| *p = it.next().unwrap());
        }
        Ok(())
    }

    /// Sets the input standardization; `scale` entries must be positive.
    pub fn set_input_normalization(&mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        if shift.len() != self.input_dim() || scale.len() != self.input_dim() {
            return Err(shape_err(self.input_dim(), shift.len().max(scale.len())));
        }
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("input scales must be positive and finite".into()));
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(())
    }

    pub fn set_output_affine(&mut self, shift: f64, scale: f64) -> Result<()> {
        if self.head != Head::Linear {
            return Err(Error::Config("output affine map applies to the linear head only".into()));
        }
        if !(scale > 0.0) || !scale.is_finite() || !shift.is_finite() {
            return Err(Error::Config(format!("bad output map shift={shift} scale={scale}")));
        }
        self.output_shift = shift;
        self.output_scale = scale;
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(shape_err(format!("{} input columns", self.input_dim()), x.ncols()));
        }
        Ok(())
    }

    fn standardize(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (j, mut col) in h.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.input_shift[j], self.input_scale[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        h
    }

    fn apply_head(&self, mut z: Array2<f64>) -> Array2<f64> {
        match self.head {
            Head::Softmax => {
                for mut row in z.rows_mut() {
                    let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - mx).exp());
                    let tot = row.sum();
                    row.mapv_inplace(|v| v / tot);
                }
            }
            Head::Sigmoid => z.mapv_inplace(sigmoid),
            Head::Linear => {
                let (a, c) = (self.output_scale, self.output_shift);
                z.mapv_inplace(|v| a * v + c);
            }
        }
        z
    }

    fn run(&self, x: &ArrayView2<f64>, keep: bool) -> Cache {
        let mut h = self.standardize(x);
        let mut acts = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w.t());
            z += &l.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            let prev = std::mem::replace(&mut h, z);
            if keep {
                acts.push(prev);
            }
        }
        Cache { acts, out: self.apply_head(h) }
    }

    /// Head outputs for a batch of raw feature rows.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        Ok(self.run(&x, false).out)
    }

    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, loss: Loss) -> Result<f64> {
        let out = self.forward(x)?;
        loss_value(out.view(), y, loss)
    }

    /// Loss and its gradient with respect to every weight and bias.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, loss: Loss) -> Result<(f64, Gradients)> {
        self.check_input(&x)?;
        let cache = self.run(&x, true);
        let value = loss_value(cache.out.view(), y, loss)?;
        let g = loss_grad(cache.out.view(), y, loss);
        let mut dz = match self.head {
            Head::Softmax => {
                let mut dz = g;
                Zip::from(dz.rows_mut()).and(cache.out.rows()).for_each(|mut gr, pr| {
                    let dot = gr.dot(&pr);
                    Zip::from(&mut gr).and(&pr).for_each(|gv, &pv| *gv = pv * (*gv - dot));
                });
                dz
            }
            Head::Sigmoid => {
                let mut dz = g;
                Zip::from(&mut dz).and(&cache.out).for_each(|d, &s| *d *= s * (1.0 - s));
                dz
            }
            Head::Linear => g * self.output_scale,
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let a = &cache.acts[i];
            let gw = dz.t().dot(a);
            let gb = dz.sum_axis(Axis(0));
            if i > 0 {
                let mut da = dz.dot(&self.layers[i].w);
                Zip::from(&mut da).and(a).for_each(|d, &h| {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                });
                dz = da;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        Ok((value, Gradients { layers: grads }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let mut text = jsonl::to_string(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("checkpoint {}: {e}", path.display())))
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_same_shape(pred: &ArrayView2<f64>, target: &ArrayView2<f64>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(shape_err(format!("{:?}", pred.dim()), format!("{:?}", target.dim())));
    }
    if pred.nrows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    Ok(())
}

pub fn loss_value(pred: ArrayView2<f64>, target: ArrayView2<f64>, loss: Loss) -> Result<f64> {
    check_same_shape(&pred, &target)?;
    let b = pred.nrows() as f64;
    let total = match loss {
        Loss::L1 => Zip::from(&pred).and(&target).fold(0.0, |acc, &p, &t| acc + (p - t).abs()),
        Loss::Mse => Zip::from(&pred).and(&target).fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t)),
    };
    Ok(total / b)
}

fn loss_grad(pred: ArrayView2<f64>, target: ArrayView2<f64>, loss: Loss) -> Array2<f64> {
    let b = pred.nrows() as f64;
    let mut g = Array2::zeros(pred.dim());
    match loss {
        Loss::L1 => Zip::from(&mut g).and(&pred).and(&target).for_each(|g, &p, &t| {
            *g = if p > t {
                1.0 / b
            } else if p < t {
                -1.0 / b
            } else {
                0.0
            }
        }),
        Loss::Mse => Zip::from(&mut g).and(&pred).and(&target).for_each(|g, &p, &t| *g = 2.0 * (p - t) / b),
    }
    g
}

/// `(1/B) Σ_i Σ_j |P_ij − P̂_ij|` over zero-padded PMF rows.
pub fn loss_pmf(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    loss_value(pred, target, Loss::L1)
}

/// Mean squared error of scalar predictions.
pub fn loss_scalar(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(shape_err(pred.len(), target.len()));
    }
    let p = ArrayView2::from_shape((pred.len(), 1), pred).expect("column view");
    let t = ArrayView2::from_shape((target.len(), 1), target).expect("column view");
    loss_value(p, t, Loss::Mse)
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl AdamW {
    pub fn new(model: &MlpModel, lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Layer> = model
            .layers
            .iter()
            .map(|l| Layer { w: Array2::zeros(l.w.dim()), b: Array1::zeros(l.b.len()) })
            .collect();
        Self { lr, beta1, beta2, eps, weight_decay, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn from_config(model: &MlpModel, cfg: &TrainConfig) -> Self {
        Self::new(model, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// `θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + ε)`, with the decay taken on the pre-step θ.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps, decay) = (self.lr, self.eps, 1.0 - self.lr * self.weight_decay);
        let upd = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p = *p * decay - lr * mh / (vh.sqrt() + eps);
        };
        for (((l, g), m), v) in model.layers.iter_mut().zip(&grads.layers).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut l.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(upd);
            Zip::from(&mut l.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(upd);
        }
    }
}

/// Feature matrix and targets for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub big_s: Vec<u32>,
}

impl TrainingData {
    pub fn from_views(views: &[RecordView], layout: FeatureLayout, target: Target, log_target: bool) -> Result<Self> {
        let n = views.len();
        let mut x = Array2::zeros((n, layout.dim()));
        let mut y = Array2::zeros((n, target.output_dim()));
        let mut big_s = Vec::with_capacity(n);
        for (i, v) in views.iter().enumerate() {
            if v.big_s > MAX_S {
                return Err(Error::Data(format!("record {}: S = {} exceeds {MAX_S}", v.id, v.big_s)));
            }
            let f = v.features(layout)?;
            x.row_mut(i).assign(&Array1::from(f));
            let lab = v.labels()?;
            match target {
                Target::Pmf => y.row_mut(i).assign(&Array1::from(lab.padded(PMF_LEN)?)),
                Target::Cycle => y[[i, 0]] = if log_target { lab.ec.ln() } else { lab.ec },
                Target::Fulfill => y[[i, 0]] = 1.0 - lab.pi0,
            }
            big_s.push(v.big_s);
        }
        Ok(Self { x, y, big_s })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub history: Vec<EpochLog>,
}

/// True once the loss changed by less than `threshold` (relative) over `window` epochs.
pub fn should_stop(losses: &[f64], window: usize, threshold: f64) -> bool {
    let n = losses.len();
    if n <= window {
        return false;
    }
    let (old, new) = (losses[n - 1 - window], losses[n - 1]);
    if old == 0.0 {
        return new == 0.0;
    }
    ((old - new) / old).abs() < threshold
}

fn column_stats(x: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    x.axis_iter(Axis(1))
        .map(|c| {
            let m = c.sum() / n;
            let var = c.fold(0.0, |a, &v| a + (v - m) * (v - m)) / n;
            let sd = var.sqrt();
            (m, if sd > 1e-12 { sd } else { 1.0 })
        })
        .unzip()
}

/// Trains with mini-batch AdamW and returns the checkpoint with the lowest
/// validation loss. Batch order is reshuffled each epoch from
/// `(seed, Shuffle, epoch)`.
pub fn train(mut model: MlpModel, data: &TrainingData, val: &TrainingData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.target.head() != model.head {
        return Err(Error::Config(format!("target {:?} needs a {:?} head", cfg.target, cfg.target.head())));
    }
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    for d in [data, val] {
        if d.x.ncols() != model.input_dim() || d.y.ncols() != model.output_dim() {
            return Err(shape_err(
                format!("{}→{}", model.input_dim(), model.output_dim()),
                format!("{}→{}", d.x.ncols(), d.y.ncols()),
            ));
        }
    }
    if cfg.standardize {
        let (shift, scale) = column_stats(&data.x);
        model.set_input_normalization(shift, scale)?;
        if model.head == Head::Linear {
            let (m, s) = column_stats(&data.y);
            model.set_output_affine(m[0], s[0])?;
        }
    }
    model.log_output = cfg.log_target;
    let loss = model.head.default_loss();
    let mut opt = AdamW::from_config(&model, cfg);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    let mut train_losses = Vec::new();
    let mut best: Option<(f64, usize, Vec<Layer>)> = None;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let mut rng = substream(cfg.seed, Stream::Shuffle, epoch as u64);
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in idx.chunks(cfg.batch_size) {
            let xb = data.x.select(Axis(0), chunk);
            let yb = data.y.select(Axis(0), chunk);
            let (l, g) = model.loss_and_grad(xb.view(), yb.view(), loss)?;
            if !l.is_finite() {
                return Err(Error::Diverged { epoch, detail: format!("batch loss {l}") });
            }
            total += l * chunk.len() as f64;
            opt.step(&mut model, &g);
        }
        let train_loss = total / data.len() as f64;
        let val_loss = if val.is_empty() { train_loss } else { model.loss(val.x.view(), val.y.view(), loss)? };
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("validation loss {val_loss}") });
        }
        log::debug!("{} epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}", cfg.target.name());
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.layers.clone()));
        }
        history.push(EpochLog { epoch, train_loss, val_loss });
        train_losses.push(train_loss);
        if should_stop(&train_losses, cfg.stop_window, cfg.stop_threshold) {
            stopped_early = true;
            break;
        }
    }
    let (best_val, best_epoch, layers) = best.expect("at least one epoch");
    model.layers = layers;
    model.train_config = Some(cfg.clone());
    model.meta = TrainMeta {
        epochs_run: history.len(),
        best_epoch,
        final_train_loss: *train_losses.last().unwrap(),
        best_val_loss: best_val,
        stopped_early,
        config_hash: cfg.hash_hex(),
    };
    Ok(TrainOutcome { model, history })
}

/// `P*_j = P_j / Σ_{i≤S} P_i` for `j ≤ S`, zero above.
pub fn project_support(p_raw: &[f64], big_s: u32) -> Result<Vec<f64>> {
    let s = big_s as usize;
    if big_s == 0 || s >= p_raw.len() {
        return Err(Error::Config(format!("S = {big_s} outside 1..={}", p_raw.len().saturating_sub(1))));
    }
    if p_raw.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Data("raw PMF has negative or non-finite entries".into()));
    }
    let mass: f64 = p_raw[..=s].iter().sum();
    if !(mass > 0.0) {
        return Err(Error::DegenerateMass { max_level: s });
    }
    let mut out = vec![0.0; p_raw.len()];
    for (o, &p) in out.iter_mut().zip(&p_raw[..=s]) {
        *o = p / mass;
    }
    Ok(out)
}

/// One system to score, in arbitrary time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub s: u32,
    #[serde(rename = "S")]
    pub big_s: u32,
    #[serde(rename = "mom_D")]
    pub mom_d: Vec<f64>,
    #[serde(rename = "mom_L")]
    pub mom_l: Vec<f64>,
}

impl Query {
    pub fn from_view(v: &RecordView) -> Self {
        Self { s: v.s, big_s: v.big_s, mom_d: v.mom_d.as_slice().to_vec(), mom_l: v.mom_l.as_slice().to_vec() }
    }

    /// Moments rescaled so demand interarrivals have mean one, and the scale factor `m_D^1`.
    pub fn normalized(&self) -> Result<(MomentVector, MomentVector, f64)> {
        let d = MomentVector::new(self.mom_d.clone())?;
        let l = MomentVector::new(self.mom_l.clone())?;
        let md1 = d.get(1);
        let c = 1.0 / md1;
        Ok((d.scaled(c), l.scaled(c), md1))
    }

    fn check(&self) -> Result<()> {
        if self.s >= self.big_s || self.big_s > MAX_S {
            return Err(Error::Config(format!("need 0 ≤ s < S ≤ {MAX_S}, got s={} S={}", self.s, self.big_s)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    #[serde(rename = "P_hat")]
    pub p_hat: Vec<f64>,
    #[serde(rename = "EC_hat")]
    pub ec_hat: f64,
    pub pi0_hat: f64,
}

impl PredictionBundle {
    pub fn mean_level(&self) -> f64 {
        self.p_hat.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
    }
}

/// The three trained networks used together at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub pmf: MlpModel,
    pub cycle: MlpModel,
    pub fulfill: MlpModel,
}

impl ModelBundle {
    pub fn new(pmf: MlpModel, cycle: MlpModel, fulfill: MlpModel) -> Result<Self> {
        let want = [(Head::Softmax, PMF_LEN), (Head::Linear, 1), (Head::Sigmoid, 1)];
        for ((m, (h, d)), t) in [&pmf, &cycle, &fulfill].into_iter().zip(want).zip(Target::ALL) {
            if m.head != h || m.output_dim() != d {
                return Err(Error::Config(format!("{} model must have a {h:?} head with {d} outputs", t.name())));
            }
            let layout = m.feature_layout.ok_or_else(|| Error::Config(format!("{} model has no feature layout", t.name())))?;
            if layout.dim() != m.input_dim() {
                return Err(shape_err(layout.dim(), m.input_dim()));
            }
        }
        Ok(Self { pmf, cycle, fulfill })
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let load = |t: Target| MlpModel::load(dir.join(t.file_name()));
        Self::new(load(Target::Pmf)?, load(Target::Cycle)?, load(Target::Fulfill)?)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.pmf.save(dir.join(Target::Pmf.file_name()))?;
        self.cycle.save(dir.join(Target::Cycle.file_name()))?;
        self.fulfill.save(dir.join(Target::Fulfill.file_name()))
    }
}

fn feature_matrix(norm: &[(MomentVector, MomentVector)], queries: &[Query], layout: FeatureLayout) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((queries.len(), layout.dim()));
    for (i, (q, (d, l))) in queries.iter().zip(norm).enumerate() {
        let f = preprocess_features(q.s, q.big_s, d, l, layout)?;
        x.row_mut(i).assign(&Array1::from(f));
    }
    Ok(x)
}

/// Batched inference: the PMF is projected onto each instance's support and
/// the cycle time is reported in the query's own time units.
pub fn predict(bundle: &ModelBundle, queries: &[Query]) -> Result<Vec<PredictionBundle>> {
    let mut norm = Vec::with_capacity(queries.len());
    let mut md1 = Vec::with_capacity(queries.len());
    for q in queries {
        q.check()?;
        let (d, l, m) = q.normalized()?;
        norm.push((d, l));
        md1.push(m);
    }
    let run = |m: &MlpModel| -> Result<Array2<f64>> {
        let x = feature_matrix(&norm, queries, m.feature_layout.expect("checked in ModelBundle::new"))?;
        m.forward(x.view())
    };
    let p = run(&bundle.pmf)?;
    let c = run(&bundle.cycle)?;
    let f = run(&bundle.fulfill)?;
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let p_hat = project_support(p.row(i).as_slice().expect("row-major output"), q.big_s)?;
            let raw_ec = if bundle.cycle.log_output { c[[i, 0]].exp() } else { c[[i, 0]] };
            let fulfill = f[[i, 0]].clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP);
            Ok(PredictionBundle { p_hat, ec_hat: raw_ec.max(EC_FLOOR) * md1[i], pi0_hat: 1.0 - fulfill })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub moments: usize,
    pub val_sae: f64,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

/// Mean per-instance L1 distance between projected predictions and targets.
pub fn projected_sae(model: &MlpModel, data: &TrainingData) -> Result<f64> {
    let out = model.forward(data.x.view())?;
    let mut total = 0.0;
    for (i, &s) in data.big_s.iter().enumerate() {
        let p = project_support(out.row(i).as_slice().expect("row-major output"), s)?;
        total += p.iter().zip(data.y.row(i)).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

/// Retrains the PMF network once per moment count `n` (with `n_D = n_L = n`).
pub fn ablate(train_views: &[RecordView], val_views: &[RecordView], moments: &[usize], cfg: &TrainConfig) -> Result<Vec<AblationPoint>> {
    if cfg.target != Target::Pmf {
        return Err(Error::Config("ablation trains the pmf target".into()));
    }
    moments
        .iter()
        .map(|&n| {
            let layout = FeatureLayout::symmetric(n);
            let tr = TrainingData::from_views(train_views, layout, Target::Pmf, false)?;
            let va = TrainingData::from_views(val_views, layout, Target::Pmf, false)?;
            let model = MlpModel::for_target(Target::Pmf, layout, &cfg.hidden, cfg.seed)?;
            let out = train(model, &tr, &va, cfg)?;
            let val_sae = if va.is_empty() { f64::NAN } else { projected_sae(&out.model, &va)? };
            log::info!("ablation n={n}: val SAE {val_sae:.5} after {} epochs", out.model.meta.epochs_run);
            Ok(AblationPoint {
                moments: n,
                val_sae,
                best_val_loss: out.model.meta.best_val_loss,
                epochs_run: out.model.meta.epochs_run,
                best_epoch: out.model.meta.best_epoch,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    layer_sizes: Vec<usize>,
    head: Head,
    /// Row-major `[out][in]` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    train_config: Option<TrainConfig>,
    feature_layout: Option<FeatureLayout>,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    output_shift: f64,
    output_scale: f64,
    log_output: bool,
    optimizer: String,
    init: String,
    meta: TrainMeta,
}

impl From<MlpModel> for Checkpoint {
    fn from(m: MlpModel) -> Self {
        Self {
            weights: m.layers.iter().map(|l| l.w.iter().copied().collect()).collect(),
            biases: m.layers.iter().map(|l| l.b.to_vec()).collect(),
            layer_sizes: m.layer_sizes,
            head: m.head,
            train_config: m.train_config,
            feature_layout: m.feature_layout,
            input_shift: m.input_shift,
            input_scale: m.input_scale,
            output_shift: m.output_shift,
            output_scale: m.output_scale,
            log_output: m.log_output,
            optimizer: "adam, decoupled weight decay".into(),
            init: "uniform fan-in: sqrt(6/fan_in) hidden, sqrt(1/fan_in) output".into(),
            meta: m.meta,
        }
    }
}

impl TryFrom<Checkpoint> for MlpModel {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        let sizes = &c.layer_sizes;
        if sizes.len() < 3 || c.weights.len() != sizes.len() - 1 || c.biases.len() != sizes.len() - 1 {
            return Err(Error::Data(format!("checkpoint layer count mismatch for sizes {sizes:?}")));
        }
        let mut layers = Vec::new();
        for (i, (w, b)) in c.weights.into_iter().zip(c.biases).enumerate() {
            let (fi, fo) = (sizes[i], sizes[i + 1]);
            if w.len() != fi * fo || b.len() != fo {
                return Err(shape_err(format!("layer {i}: {fo}x{fi}"), format!("{} weights, {} biases", w.len(), b.len())));
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("layer {i} has non-finite parameters")));
            }
            layers.push(Layer { w: Array2::from_shape_vec((fo, fi), w).expect("length checked"), b: Array1::from(b) });
        }
        let mut m = init_mlp(sizes, c.head, 0)?;
        m.layers = layers;
        m.set_input_normalization(c.input_shift, c.input_scale)
            .map_err(|e| Error::Data(format!("checkpoint normalization: {e}")))?;
        if c.head == Head::Linear {
            m.set_output_affine(c.output_shift, c.output_scale)?;
        }
        m.log_output = c.log_output;
        if let Some(l) = c.feature_layout {
            if l.dim() != sizes[0] {
                return Err(shape_err(sizes[0], l.dim()));
            }
        }
        m.feature_layout = c.feature_layout;
        m.train_config = c.train_config;
        m.meta = c.meta;
        Ok(m)
    }
}
