//! Nonlinear autoregressive model with exogenous inputs.
//!
//! `y(t) = f(y(t-1), ..., y(t-d), u(t-1), ..., u(t-d))` where `f` is a single
//! tanh hidden layer with a linear output. Inputs and targets are z-normalized
//! with statistics taken from the training series.
//!
//! Two feedback modes are supported. In open loop (series-parallel) the
//! delayed outputs fed to the network are the given labels. In closed loop
//! (parallel) they are the network's own previous outputs, and training
//! backpropagates through the recurrence.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ddcpd::ChangePointSet;
use crate::error::{Error, Result};
use crate::featurizer::FeatureSeries;

/// Inclusive range of delays, written `lo:hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delays {
    pub lo: usize,
    pub hi: usize,
}

impl Delays {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo == 0 || hi < lo {
            return Err(Error::config(format!("invalid delay range {lo}:{hi}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn count(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.lo..=self.hi
    }
}

impl Default for Delays {
    fn default() -> Self {
        Self { lo: 1, hi: 2 }
    }
}

impl fmt::Display for Delays {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

impl FromStr for Delays {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("delay range must look like `1:2`, got `{s}`"));
        let (lo, hi) = match s.split_once(':') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (s.trim(), s.trim()),
        };
        Delays::new(lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?)
    }
}

/// Where the delayed outputs come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LoopMode {
    /// Series-parallel: delayed outputs are the supplied labels.
    #[default]
    Open,
    /// Parallel: delayed outputs are the model's own predictions.
    Closed,
}

impl FromStr for LoopMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "open" | "series-parallel" | "teacher" => Ok(LoopMode::Open),
            "closed" | "parallel" => Ok(LoopMode::Closed),
            other => Err(Error::config(format!("unknown loop mode `{other}`"))),
        }
    }
}

impl fmt::Display for LoopMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopMode::Open => "open",
            LoopMode::Closed => "closed",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NarxConfig {
    pub input_delays: Delays,
    pub feedback_delays: Delays,
    pub hidden_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
    /// Number of contiguous blocks the series is cut into before the
    /// train/validation split; the tail of each block is held out. One block
    /// is a plain chronological split.
    pub val_blocks: usize,
    pub kfold_k: usize,
    pub training_mode: LoopMode,
}

impl Default for NarxConfig {
    fn default() -> Self {
        Self {
            input_delays: Delays::default(),
            feedback_delays: Delays::default(),
            hidden_size: 5,
            epochs: 500,
            patience: 25,
            learning_rate: 0.01,
            train_fraction: 0.8,
            val_blocks: 1,
            kfold_k: 5,
            training_mode: LoopMode::Open,
        }
    }
}

impl NarxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::config("hidden size must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.val_blocks == 0 {
            return Err(Error::config("need at least one validation block"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        Delays::new(self.input_delays.lo, self.input_delays.hi)?;
        Delays::new(self.feedback_delays.lo, self.feedback_delays.hi)?;
        Ok(())
    }

    /// Largest delay of either kind.
    pub fn max_delay(&self) -> usize {
        self.input_delays.hi.max(self.feedback_delays.hi)
    }

    /// Width of the network input for `m` exogenous features.
    pub fn input_dim(&self, n_features: usize) -> usize {
        n_features * self.input_delays.count() + self.feedback_delays.count()
    }
}

/// Affine z-score map for one variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    /// Fits mean and population standard deviation; a zero spread maps to 1.
    pub fn fit(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Offsets of each parameter block inside the flat parameter vector:
/// `[w_in (hidden x inputs, row-major) | b_in | w_out | b_out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    inputs: usize,
    hidden: usize,
}

impl Layout {
    fn w_in(&self, k: usize, i: usize) -> usize {
        k * self.inputs + i
    }
    fn b_in(&self, k: usize) -> usize {
        self.hidden * self.inputs + k
    }
    fn w_out(&self, k: usize) -> usize {
        self.hidden * (self.inputs + 1) + k
    }
    fn b_out(&self) -> usize {
        self.hidden * (self.inputs + 2)
    }
    fn len(&self) -> usize {
        self.b_out() + 1
    }
}

/// A trained (or initialized) predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct NarxModel {
    config: NarxConfig,
    n_features: usize,
    params: Vec<f64>,
    feature_norms: Vec<Normalizer>,
    label_norm: Normalizer,
    train_mse: f64,
    val_mse: f64,
}

/// Features and labels prepared for a model: normalized and aligned.
#[derive(Clone, Debug)]
pub struct Batch {
    u: Vec<f64>,
    y: Vec<f64>,
    n_features: usize,
    max_delay: usize,
}

impl Batch {
    /// Number of predictable steps (`T - max_delay`).
    pub fn rows(&self) -> usize {
        self.y.len().saturating_sub(self.max_delay)
    }
}

impl NarxModel {
    fn layout(&self) -> Layout {
        Layout {
            inputs: self.config.input_dim(self.n_features),
            hidden: self.config.hidden_size,
        }
    }

    /// Model with every weight and bias at zero and the given normalization.
    pub fn zeros(
        config: NarxConfig,
        feature_norms: Vec<Normalizer>,
        label_norm: Normalizer,
    ) -> Result<Self> {
        config.validate()?;
        let n_features = feature_norms.len();
        let layout = Layout {
            inputs: config.input_dim(n_features),
            hidden: config.hidden_size,
        };
        Ok(Self {
            config,
            n_features,
            params: vec![0.0; layout.len()],
            feature_norms,
            label_norm,
            train_mse: f64::NAN,
            val_mse: f64::NAN,
        })
    }

    /// Model with normalization fitted to the given data and seeded random
    /// weights: uniform in `[-0.5, 0.5] / sqrt(fan_in)`, biases zero.
    pub fn initialize(
        features: &FeatureSeries,
        labels: &[f64],
        config: NarxConfig,
        seed: u64,
    ) -> Result<Self> {
        check_finite(features, labels)?;
        let feature_norms = features.columns().iter().map(|c| Normalizer::fit(c)).collect();
        let mut model = Self::zeros(config, feature_norms, Normalizer::fit(labels))?;
        let layout = model.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_scale = 1.0 / (layout.inputs as f64).sqrt();
        let out_scale = 1.0 / (layout.hidden as f64).sqrt();
        for k in 0..layout.hidden {
            for i in 0..layout.inputs {
                model.params[layout.w_in(k, i)] = rng.gen_range(-0.5..=0.5) * in_scale;
            }
        }
        for k in 0..layout.hidden {
            model.params[layout.w_out(k)] = rng.gen_range(-0.5..=0.5) * out_scale;
        }
        Ok(model)
    }

    pub fn config(&self) -> &NarxConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn input_dim(&self) -> usize {
        self.layout().inputs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn feature_norms(&self) -> &[Normalizer] {
        &self.feature_norms
    }

    pub fn label_norm(&self) -> Normalizer {
        self.label_norm
    }

    /// Output bias in label units.
    pub fn output_bias(&self) -> f64 {
        self.label_norm.denormalize(self.params[self.layout().b_out()])
    }

    /// MSE on the training rows at the selected epoch, in label units.
    pub fn train_mse(&self) -> f64 {
        self.train_mse
    }

    /// MSE on the validation rows at the selected epoch, in label units.
    pub fn val_mse(&self) -> f64 {
        self.val_mse
    }

    /// Normalizes features and labels into a batch for this model.
    pub fn batch(&self, features: &FeatureSeries, labels: &[f64]) -> Result<Batch> {
        if features.dims() != self.n_features {
            return Err(Error::shape(format!(
                "model expects {} features, got {}",
                self.n_features,
                features.dims()
            )));
        }
        if features.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        check_finite(features, labels)?;
        let mut u = Vec::with_capacity(features.len() * self.n_features);
        for row in features.rows() {
            u.extend(row.iter().zip(&self.feature_norms).map(|(v, n)| n.normalize(*v)));
        }
        Ok(Batch {
            u,
            y: labels.iter().map(|&v| self.label_norm.normalize(v)).collect(),
            n_features: self.n_features,
            max_delay: self.config.max_delay(),
        })
    }

    /// Mean squared error (normalized units) over all rows of `batch` and its
    /// gradient with respect to the flat parameter vector, in the model's
    /// training mode.
    pub fn loss_and_gradient(&self, batch: &Batch) -> (f64, Vec<f64>) {
        let all = vec![true; batch.rows()];
        let (loss, grad) = self.eval(&self.params, batch, self.config.training_mode, &all, true);
        (loss, grad.expect("requested"))
    }

    /// Loss only, at arbitrary parameters.
    pub fn loss_at(&self, params: &[f64], batch: &Batch) -> f64 {
        self.eval(params, batch, self.config.training_mode, &vec![true; batch.rows()], false).0
    }

    /// Forward (and optionally backward) pass. `loss_rows` flags the
    /// predictable steps that enter the loss; row `r` predicts step
    /// `r + max_delay`.
    fn eval(
        &self,
        params: &[f64],
        batch: &Batch,
        mode: LoopMode,
        loss_rows: &[bool],
        want_grad: bool,
    ) -> (f64, Option<Vec<f64>>) {
        let layout = self.layout();
        let d0 = batch.max_delay;
        let m = batch.n_features;
        let first_row = match mode {
            LoopMode::Open => loss_rows.iter().position(|&b| b).unwrap_or(0),
            LoopMode::Closed => 0,
        };
        let end_row = loss_rows.iter().rposition(|&b| b).map_or(first_row, |i| i + 1);
        let n_rows = end_row - first_row;
        let n_loss = loss_rows.iter().filter(|&&b| b).count().max(1) as f64;
        let in_delays = self.config.input_delays;
        let fb_delays = self.config.feedback_delays;
        let fb_offset = m * in_delays.count();

        // Feedback source: labels for open loop; own outputs (seeded with the
        // first max_delay labels) for closed loop.
        let mut fb = batch.y.clone();
        let mut xs = vec![0.0; n_rows * layout.inputs];
        let mut hs = vec![0.0; n_rows * layout.hidden];
        let mut outs = vec![0.0; n_rows];
        let mut loss = 0.0;
        for (r, row) in (first_row..end_row).enumerate() {
            let t = row + d0;
            let x = &mut xs[r * layout.inputs..(r + 1) * layout.inputs];
            let mut i = 0;
            for d in in_delays.iter() {
                x[i..i + m].copy_from_slice(&batch.u[(t - d) * m..(t - d + 1) * m]);
                i += m;
            }
            for d in fb_delays.iter() {
                x[i] = fb[t - d];
                i += 1;
            }
            let mut out = params[layout.b_out()];
            for k in 0..layout.hidden {
                let w = &params[layout.w_in(k, 0)..layout.w_in(k, 0) + layout.inputs];
                let a = params[layout.b_in(k)] + w.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
                let h = a.tanh();
                hs[r * layout.hidden + k] = h;
                out += params[layout.w_out(k)] * h;
            }
            outs[r] = out;
            if mode == LoopMode::Closed {
                fb[t] = out;
            }
            if loss_rows[row] {
                let e = out - batch.y[t];
                loss += e * e;
            }
        }
        loss /= n_loss;
        if !want_grad {
            return (loss, None);
        }

        let mut grad = vec![0.0; layout.len()];
        let mut carry = vec![0.0; batch.y.len()];
        let mut delta = vec![0.0; layout.hidden];
        for (r, row) in (first_row..end_row).enumerate().rev() {
            let t = row + d0;
            let mut g = carry[t];
            if loss_rows[row] {
                g += 2.0 * (outs[r] - batch.y[t]) / n_loss;
            }
            if g == 0.0 {
                continue;
            }
            let x = &xs[r * layout.inputs..(r + 1) * layout.inputs];
            let h = &hs[r * layout.hidden..(r + 1) * layout.hidden];
            grad[layout.b_out()] += g;
            for k in 0..layout.hidden {
                grad[layout.w_out(k)] += g * h[k];
                let dk = g * params[layout.w_out(k)] * (1.0 - h[k] * h[k]);
                delta[k] = dk;
                grad[layout.b_in(k)] += dk;
                let base = layout.w_in(k, 0);
                for (gi, xi) in grad[base..base + layout.inputs].iter_mut().zip(x) {
                    *gi += dk * xi;
                }
            }
            if mode == LoopMode::Closed {
                for (j, d) in fb_delays.iter().enumerate() {
                    let src = t - d;
                    if src < d0 {
                        continue;
                    }
                    let col = fb_offset + j;
                    let back: f64 = (0..layout.hidden)
                        .map(|k| delta[k] * params[layout.w_in(k, col)])
                        .sum();
                    carry[src] += back;
                }
            }
        }
        (loss, Some(grad))
    }
}

fn check_finite(features: &FeatureSeries, labels: &[f64]) -> Result<()> {
    if features.rows().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features contain non-finite values"));
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("labels contain non-finite values"));
    }
    Ok(())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Full-batch Adam on `train_rows`, early-stopped on `val_rows`. Returns the
/// parameters at the best validation loss with (train, val) normalized MSE.
fn fit_rows(
    model: &mut NarxModel,
    batch: &Batch,
    train_rows: &[bool],
    val_rows: &[bool],
    seed: u64,
) -> Result<(f64, f64)> {
    let mode = model.config.training_mode;
    let cfg = model.config.clone();
    let mut params = model.params.clone();
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let val_of = |p: &[f64]| model.eval(p, batch, mode, val_rows, false).0;

    let mut best_val = val_of(&params);
    let mut best_params = params.clone();
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let (loss, grad) = model.eval(&params, batch, mode, train_rows, true);
        let grad = grad.expect("requested");
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                seed,
                reason: format!("loss became non-finite at epoch {epoch}"),
            });
        }
        opt.step(&mut params, &grad);
        let val = val_of(&params);
        if !val.is_finite() {
            return Err(Error::Training {
                seed,
                reason: format!("validation loss became non-finite at epoch {epoch}"),
            });
        }
        if val < best_val {
            best_val = val;
            best_params.copy_from_slice(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    model.params = best_params;
    let train = model.eval(&model.params, batch, mode, train_rows, false).0;
    Ok((train, best_val))
}

fn range_mask(rows: usize, range: Range<usize>) -> Vec<bool> {
    (0..rows).map(|r| range.contains(&r)).collect()
}

/// Train/validation masks over `rows` predictable steps: the rows are cut
/// into `blocks` contiguous blocks and the last `1 - train_fraction` of each
/// block is held out.
fn split_rows(rows: usize, train_fraction: f64, blocks: usize) -> (Vec<bool>, Vec<bool>) {
    let blocks = blocks.clamp(1, (rows / 2).max(1));
    let mut train = vec![false; rows];
    for b in 0..blocks {
        let lo = b * rows / blocks;
        let hi = (b + 1) * rows / blocks;
        let n_train = ((((hi - lo) as f64) * train_fraction).round() as usize).clamp(1, hi - lo - 1);
        train[lo..lo + n_train].iter_mut().for_each(|t| *t = true);
    }
    let val = train.iter().map(|t| !t).collect();
    (train, val)
}

/// Trains a model on features -> labels with a chronological split.
pub fn train(features: &FeatureSeries, labels: &[f64], cfg: &NarxConfig, seed: u64) -> Result<NarxModel> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.len() <= cfg.max_delay() + 10 {
        return Err(Error::InsufficientData(format!(
            "{} steps is too short for max delay {}",
            features.len(),
            cfg.max_delay()
        )));
    }
    let mut model = NarxModel::initialize(features, labels, cfg.clone(), seed)?;
    let batch = model.batch(features, labels)?;
    let (train_rows, val_rows) = split_rows(batch.rows(), cfg.train_fraction, cfg.val_blocks);
    let (train, val) = fit_rows(&mut model, &batch, &train_rows, &val_rows, seed)?;
    let scale = model.label_norm.std * model.label_norm.std;
    model.train_mse = train * scale;
    model.val_mse = val * scale;
    Ok(model)
}

/// Picks the grid entry with the lowest mean validation MSE over `k`
/// forward-chaining folds: the series is cut into `k + 1` blocks and fold `i`
/// trains on blocks `0..i` and validates on block `i`.
pub fn kfold_tune(
    features: &FeatureSeries,
    labels: &[f64],
    grid: &[NarxConfig],
    k: usize,
    seed: u64,
) -> Result<NarxConfig> {
    if grid.is_empty() {
        return Err(Error::config("empty hyperparameter grid"));
    }
    if k < 2 {
        return Err(Error::config(format!("k-fold needs k >= 2, got {k}")));
    }
    if grid.len() == 1 {
        grid[0].validate()?;
        return Ok(grid[0].clone());
    }
    let mut best: Option<(f64, usize)> = None;
    for (gi, cfg) in grid.iter().enumerate() {
        cfg.validate()?;
        let mut model = NarxModel::initialize(features, labels, cfg.clone(), seed)?;
        let batch = model.batch(features, labels)?;
        let rows = batch.rows();
        let block = rows / (k + 1);
        if block < 2 {
            return Err(Error::InsufficientData(format!(
                "{rows} rows cannot form {} chronological blocks",
                k + 1
            )));
        }
        let init = model.params.clone();
        let mut total = 0.0;
        for fold in 1..=k {
            model.params.copy_from_slice(&init);
            let val_end = if fold == k { rows } else { (fold + 1) * block };
            let (_, val) = fit_rows(
                &mut model,
                &batch,
                &range_mask(rows, 0..fold * block),
                &range_mask(rows, fold * block..val_end),
                seed,
            )?;
            total += val;
        }
        let mean = total / k as f64;
        if best.map_or(true, |(b, _)| mean < b) {
            best = Some((mean, gi));
        }
    }
    Ok(grid[best.expect("non-empty grid").1].clone())
}

/// Runs the model over `features`. The first `max_delay` outputs are copied
/// from `teacher_labels`; afterwards delayed outputs come from the labels
/// (open loop) or from the model's own predictions (closed loop).
pub fn predict(
    model: &NarxModel,
    features: &FeatureSeries,
    teacher_labels: &[f64],
    mode: LoopMode,
) -> Result<Vec<f64>> {
    let batch = model.batch(features, teacher_labels)?;
    let d0 = batch.max_delay;
    if teacher_labels.len() <= d0 {
        return Err(Error::shape(format!(
            "series of length {} is shorter than the max delay {d0}",
            teacher_labels.len()
        )));
    }
    let layout = model.layout();
    let m = batch.n_features;
    let mut fb = batch.y.clone();
    let mut out: Vec<f64> = teacher_labels[..d0].to_vec();
    let mut x = vec![0.0; layout.inputs];
    for t in d0..teacher_labels.len() {
        let mut i = 0;
        for d in model.config.input_delays.iter() {
            x[i..i + m].copy_from_slice(&batch.u[(t - d) * m..(t - d + 1) * m]);
            i += m;
        }
        for d in model.config.feedback_delays.iter() {
            x[i] = fb[t - d];
            i += 1;
        }
        let p = &model.params;
        let mut z = p[layout.b_out()];
        for k in 0..layout.hidden {
            let base = layout.w_in(k, 0);
            let a = p[layout.b_in(k)]
                + p[base..base + layout.inputs].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            z += p[layout.w_out(k)] * a.tanh();
        }
        if mode == LoopMode::Closed {
            fb[t] = z;
        }
        out.push(model.label_norm.denormalize(z));
    }
    Ok(out)
}

/// Shifts a one-step-ahead prediction back by `lag` steps so entry `t` is the
/// model's reading of the features observed at step `t`. The tail repeats the
/// last available value.
pub fn align_to_inputs(pred: &[f64], lag: usize) -> Vec<f64> {
    let n = pred.len();
    (0..n).map(|t| pred[(t + lag).min(n - 1)]).collect()
}

/// Rounds half up, then clamps into `[lo, hi]`.
pub fn discretize(pred: &[f64], lo: u32, hi: u32) -> Vec<u32> {
    pred.iter()
        .map(|&p| {
            let r = (p + 0.5).floor();
            r.clamp(f64::from(lo), f64::from(hi)) as u32
        })
        .collect()
}

/// Agreement between predicted and simulated levels around change points.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    /// Mean squared level difference over the scored windows.
    pub mse: f64,
    /// Fraction of scored intervals whose levels agree.
    pub windowed_accuracy: f64,
    /// First predicted transition inside each window, in minutes.
    pub predicted_cp_times: Vec<Option<f64>>,
    /// `sum |predicted - simulated|` over change points, in minutes. A window
    /// without any predicted transition contributes its half-width.
    pub abs_time_deviation_min: f64,
    /// Number of distinct intervals scored.
    pub scored: usize,
    /// Number of scored intervals that disagree.
    pub mismatched: usize,
}

/// Scores `pred_levels` against `sim_levels` over the union of windows
/// `[c - half_width, c + half_width)` around each change point `c`, truncated
/// at the series edges.
pub fn windowed_accuracy(
    pred_levels: &[u32],
    sim_levels: &[u32],
    centers: &ChangePointSet,
    half_width: usize,
    interval_min: f64,
) -> Result<AccuracyReport> {
    if pred_levels.len() != sim_levels.len() {
        return Err(Error::shape(format!(
            "{} predicted levels vs {} simulated",
            pred_levels.len(),
            sim_levels.len()
        )));
    }
    let n = pred_levels.len();
    if half_width == 0 || centers.is_empty() || n == 0 {
        return Err(Error::invalid("empty comparison window"));
    }
    let mut in_window = vec![false; n];
    let mut predicted = Vec::with_capacity(centers.len());
    let mut deviation = 0.0;
    for &c in centers.taus() {
        let lo = c.saturating_sub(half_width);
        let hi = (c + half_width).min(n);
        if lo >= hi {
            return Err(Error::invalid(format!("window around {c} is empty")));
        }
        in_window[lo..hi].iter_mut().for_each(|w| *w = true);
        // Nearest transition to the center; the earlier one on ties.
        let transition = (lo.max(1)..hi)
            .filter(|&i| pred_levels[i] != pred_levels[i - 1])
            .min_by_key(|&i| (i.abs_diff(c), i));
        match transition {
            Some(i) => {
                predicted.push(Some(i as f64 * interval_min));
                deviation += i.abs_diff(c) as f64 * interval_min;
            }
            None => {
                predicted.push(None);
                deviation += half_width as f64 * interval_min;
            }
        }
    }
    let mut scored = 0;
    let mut mismatched = 0;
    let mut sq = 0.0;
    for i in (0..n).filter(|&i| in_window[i]) {
        scored += 1;
        let d = f64::from(pred_levels[i]) - f64::from(sim_levels[i]);
        if d != 0.0 {
            mismatched += 1;
        }
        sq += d * d;
    }
    Ok(AccuracyReport {
        mse: sq / scored as f64,
        windowed_accuracy: (scored - mismatched) as f64 / scored as f64,
        predicted_cp_times: predicted,
        abs_time_deviation_min: deviation,
        scored,
        mismatched,
    })
}

/// Finite-difference step used by [`gradient_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Largest relative error between the analytic loss gradient and central
/// finite differences. The denominator is floored so parameters with
/// vanishing gradients do not dominate.
pub fn gradient_check(model: &NarxModel, batch: &Batch) -> Result<f64> {
    if batch.rows() == 0 {
        return Err(Error::invalid("gradient check needs a non-empty batch"));
    }
    let (_, analytic) = model.loss_and_gradient(batch);
    let mut params = model.params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + GRAD_CHECK_STEP;
        let up = model.loss_at(&params, batch);
        params[i] = orig - GRAD_CHECK_STEP;
        let down = model.loss_at(&params, batch);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

const FORMAT_TAG: &str = "narx-v1";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_list(vs: impl IntoIterator<Item = f64>) -> String {
    vs.into_iter().map(fmt_f64).collect::<Vec<_>>().join(",")
}

impl NarxModel {
    /// Flat `key=value` text with 17 significant digits per number.
    pub fn to_text(&self) -> String {
        let layout = self.layout();
        let p = &self.params;
        let c = &self.config;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("format", FORMAT_TAG.into());
        kv("input_delays", c.input_delays.to_string());
        kv("feedback_delays", c.feedback_delays.to_string());
        kv("hidden_size", c.hidden_size.to_string());
        kv("epochs", c.epochs.to_string());
        kv("patience", c.patience.to_string());
        kv("learning_rate", fmt_f64(c.learning_rate));
        kv("train_fraction", fmt_f64(c.train_fraction));
        kv("val_blocks", c.val_blocks.to_string());
        kv("kfold_k", c.kfold_k.to_string());
        kv("training_mode", c.training_mode.to_string());
        kv("n_features", self.n_features.to_string());
        kv("n_inputs", layout.inputs.to_string());
        kv("w_in", fmt_list(p[..layout.b_in(0)].iter().copied()));
        kv("b_in", fmt_list(p[layout.b_in(0)..layout.w_out(0)].iter().copied()));
        kv("w_out", fmt_list(p[layout.w_out(0)..layout.b_out()].iter().copied()));
        kv("b_out", fmt_f64(p[layout.b_out()]));
        kv("feature_mean", fmt_list(self.feature_norms.iter().map(|n| n.mean)));
        kv("feature_std", fmt_list(self.feature_norms.iter().map(|n| n.std)));
        kv("label_mean", fmt_f64(self.label_norm.mean));
        kv("label_std", fmt_f64(self.label_norm.std));
        kv("train_mse", fmt_f64(self.train_mse));
        kv("val_mse", fmt_f64(self.val_mse));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        use std::collections::HashMap;
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "<model>".into(),
                line: i as u64 + 1,
                message: "expected key=value".into(),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::config(format!("model text is missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::config(format!("bad number for `{k}`")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::config(format!("bad integer for `{k}`")))
        };
        let list = |k: &str| -> Result<Vec<f64>> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|x| x.trim().parse().map_err(|_| Error::config(format!("bad number in `{k}`"))))
                .collect()
        };
        if get("format")? != FORMAT_TAG {
            return Err(Error::config("unsupported model format"));
        }
        let config = NarxConfig {
            input_delays: get("input_delays")?.parse()?,
            feedback_delays: get("feedback_delays")?.parse()?,
            hidden_size: int("hidden_size")?,
            epochs: int("epochs")?,
            patience: int("patience")?,
            learning_rate: num("learning_rate")?,
            train_fraction: num("train_fraction")?,
            val_blocks: int("val_blocks")?,
            kfold_k: int("kfold_k")?,
            training_mode: get("training_mode")?.parse()?,
        };
        let means = list("feature_mean")?;
        let stds = list("feature_std")?;
        if means.len() != stds.len() || means.len() != int("n_features")? {
            return Err(Error::shape("feature normalization lengths disagree"));
        }
        let norms = means
            .into_iter()
            .zip(stds)
            .map(|(mean, std)| Normalizer { mean, std })
            .collect();
        let label = Normalizer {
            mean: num("label_mean")?,
            std: num("label_std")?,
        };
        let mut model = NarxModel::zeros(config, norms, label)?;
        let layout = model.layout();
        if int("n_inputs")? != layout.inputs {
            return Err(Error::shape("n_inputs disagrees with delays and features"));
        }
        let w_in = list("w_in")?;
        let b_in = list("b_in")?;
        let w_out = list("w_out")?;
        if w_in.len() != layout.hidden * layout.inputs
            || b_in.len() != layout.hidden
            || w_out.len() != layout.hidden
        {
            return Err(Error::shape("weight block sizes disagree with the config"));
        }
        let mut params = w_in;
        params.extend(b_in);
        params.extend(w_out);
        params.push(num("b_out")?);
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("model weights must be finite"));
        }
        model.params = params;
        model.train_mse = num("train_mse")?;
        model.val_mse = num("val_mse")?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_series(t: usize, m: usize, seed: u64) -> FeatureSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..m).map(|_| (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        FeatureSeries::from_columns(10.0, (0..m).map(|j| format!("u{j}")).collect(), &cols).unwrap()
    }

    #[test]
    fn default_configuration_input_width() {
        let cfg = NarxConfig::default();
        assert_eq!(cfg.input_dim(6), 14);
        assert_eq!(cfg.hidden_size, 5);
        assert_eq!("1:2".parse::<Delays>().unwrap(), Delays { lo: 1, hi: 2 });
        assert!("0:2".parse::<Delays>().is_err());
    }

    #[test]
    fn zero_model_outputs_output_bias() {
        let fs = random_series(40, 3, 1);
        let labels: Vec<f64> = (0..40).map(|i| (i % 3) as f64 + 1.0).collect();
        let init = NarxModel::initialize(&fs, &labels, NarxConfig::default(), 0).unwrap();
        let mut model = NarxModel::zeros(
            NarxConfig::default(),
            init.feature_norms().to_vec(),
            init.label_norm(),
        )
        .unwrap();
        let bias = 0.7;
        let b = model.layout().b_out();
        model.params_mut()[b] = bias;
        let out = predict(&model, &fs, &labels, LoopMode::Open).unwrap();
        for &o in &out[2..] {
            assert!((o - model.output_bias()).abs() < 1e-12);
        }
        assert_eq!(&out[..2], &labels[..2]);
    }

    #[test]
    fn discretize_rounding_and_clamp() {
        assert_eq!(discretize(&[1.49, 1.5, 3.7, 0.2, 2.5], 1, 3), vec![1, 2, 3, 1, 3]);
    }

    #[test]
    fn accuracy_identical_series() {
        let levels: Vec<u32> = (0..144).map(|i| if i < 60 { 1 } else if i < 120 { 3 } else { 2 }).collect();
        let cps = ChangePointSet::new(vec![60, 120]).unwrap();
        for h in [1, 5, 12, 200] {
            let r = windowed_accuracy(&levels, &levels, &cps, h, 10.0).unwrap();
            assert_eq!(r.windowed_accuracy, 1.0);
            assert_eq!(r.abs_time_deviation_min, 0.0);
            assert_eq!(r.predicted_cp_times, vec![Some(600.0), Some(1200.0)]);
        }
    }

    #[test]
    fn accuracy_no_transition_penalty() {
        let sim: Vec<u32> = (0..40).map(|i| if i < 20 { 1 } else { 2 }).collect();
        let pred = vec![1u32; 40];
        let cps = ChangePointSet::new(vec![20]).unwrap();
        let r = windowed_accuracy(&pred, &sim, &cps, 4, 10.0).unwrap();
        assert_eq!(r.predicted_cp_times, vec![None]);
        assert_eq!(r.abs_time_deviation_min, 40.0);
        assert_eq!(r.windowed_accuracy, 0.5);
        assert!(windowed_accuracy(&pred, &sim, &cps, 0, 10.0).is_err());
        assert!(windowed_accuracy(&pred, &sim[..10], &cps, 3, 10.0).is_err());
    }

    #[test]
    fn normalizer_round_trip() {
        let xs = [3.0, -1.5, 8.25, 0.0, 1e-3];
        let n = Normalizer::fit(&xs);
        for &x in &xs {
            assert!((n.denormalize(n.normalize(x)) - x).abs() < 1e-12);
        }
        assert_eq!(Normalizer::fit(&[2.0, 2.0]).std, 1.0);
    }

    #[test]
    fn closed_loop_gradient_matches_finite_differences() {
        let fs = random_series(30, 2, 4);
        let labels: Vec<f64> = (0..30).map(|i| if i < 15 { 1.0 } else { 3.0 }).collect();
        let cfg = NarxConfig {
            hidden_size: 3,
            training_mode: LoopMode::Closed,
            ..NarxConfig::default()
        };
        let model = NarxModel::initialize(&fs, &labels, cfg, 9).unwrap();
        let batch = model.batch(&fs, &labels).unwrap();
        assert!(gradient_check(&model, &batch).unwrap() < 1e-4);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let fs = random_series(40, 3, 2);
        let labels: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let cfg = NarxConfig { epochs: 20, ..NarxConfig::default() };
        let model = train(&fs, &labels, &cfg, 5).unwrap();
        let text = model.to_text();
        let back = NarxModel::from_text(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let fs = random_series(12, 2, 0);
        let labels = vec![1.0; 12];
        assert!(matches!(
            train(&fs, &labels, &NarxConfig::default(), 0),
            Err(Error::InsufficientData(_))
        ));
        let fs = random_series(40, 2, 0);
        let mut labels = vec![1.0; 40];
        labels[3] = f64::NAN;
        assert!(train(&fs, &labels, &NarxConfig::default(), 0).is_err());
        assert!(matches!(
            train(&fs, &labels[..30], &NarxConfig::default(), 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn kfold_edges() {
        let fs = random_series(60, 1, 3);
        let labels = fs.column(0);
        assert!(kfold_tune(&fs, &labels, &[], 3, 0).is_err());
        let only = NarxConfig { hidden_size: 2, ..NarxConfig::default() };
        assert_eq!(kfold_tune(&fs, &labels, &[only.clone()], 3, 0).unwrap(), only);
        assert!(kfold_tune(&fs, &labels, &[only], 1, 0).is_err());
    }
}
