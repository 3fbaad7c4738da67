//! Simulated-annealing search over change point sets, with the
//! simulate -> featurize -> train -> test fitness evaluation.

use std::collections::HashMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ddcpd::ChangePointSet;
use crate::error::{Error, Result};
use crate::featurizer::{average_series, level_series, snapshot_features, FeatureSeries};
use crate::narx::{
    align_to_inputs, discretize, kfold_tune, predict, train, windowed_accuracy, AccuracyReport,
    LoopMode, NarxConfig,
};
use crate::seed::{derive_seed, purpose};
use crate::simkit::{simulate, ArrivalTrace, ResourceSchedule, ServiceModel};

/// Error signal minimized by the search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// One minus the windowed accuracy of discretized predictions.
    #[default]
    OneMinusAccuracy,
    /// Mean squared error of the real-valued predictions over the windows.
    Mse,
    /// Absolute time deviation of predicted transitions, in minutes.
    TimeDeviation,
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "one_minus_accuracy" | "accuracy" => Ok(Self::OneMinusAccuracy),
            "mse" => Ok(Self::Mse),
            "time_deviation" | "deviation" => Ok(Self::TimeDeviation),
            other => Err(Error::config(format!("unknown objective `{other}`"))),
        }
    }
}

/// How a worse candidate is treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AcceptanceRule {
    /// Accept a worse candidate with probability `exp(-delta / (k * Temp(k)))`.
    #[default]
    Metropolis,
    /// Literal reading of the printed rule: for a candidate that is not
    /// better, keep the incumbent with probability
    /// `min(1, exp(eps - eps_prev / (k * Temp(k))))`.
    AsPrinted,
}

impl FromStr for AcceptanceRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "metropolis" => Ok(Self::Metropolis),
            "as_printed" | "printed" => Ok(Self::AsPrinted),
            other => Err(Error::config(format!("unknown acceptance rule `{other}`"))),
        }
    }
}

/// Comparison-window schedule: starts wide and shrinks by `shrink` (a
/// fraction) each time the incumbent improves, never below `floor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowSchedule {
    pub initial_half_width: usize,
    pub shrink: f64,
    pub floor: usize,
}

impl Default for WindowSchedule {
    fn default() -> Self {
        Self {
            initial_half_width: 12,
            shrink: 0.2,
            floor: 3,
        }
    }
}

impl WindowSchedule {
    pub fn next(&self, half_width: usize) -> usize {
        let shrunk = (half_width as f64 * (1.0 - self.shrink)).round() as usize;
        shrunk.max(self.floor).min(half_width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnealConfig {
    pub k_max: usize,
    /// Largest per-change-point move, in grid intervals.
    pub neighbor_radius: usize,
    pub temp0: f64,
    pub gamma: f64,
    pub replications: usize,
    pub objective: ObjectiveKind,
    pub window: WindowSchedule,
    pub acceptance: AcceptanceRule,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            k_max: 60,
            neighbor_radius: 6,
            temp0: 1.0,
            gamma: 0.95,
            replications: 5,
            objective: ObjectiveKind::OneMinusAccuracy,
            window: WindowSchedule::default(),
            acceptance: AcceptanceRule::Metropolis,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbor_radius == 0 {
            return Err(Error::config("neighbor radius must be at least 1"));
        }
        if !(self.temp0 > 0.0) {
            return Err(Error::config("initial temperature must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("cooling factor must lie in (0, 1)"));
        }
        if self.replications == 0 {
            return Err(Error::config("need at least one replication"));
        }
        if self.window.initial_half_width == 0 || self.window.floor == 0 {
            return Err(Error::config("comparison window must be at least one interval"));
        }
        if !(0.0..1.0).contains(&self.window.shrink) {
            return Err(Error::config("window shrink must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Geometric cooling: `temp0 * gamma^k`.
pub fn temp(k: usize, cfg: &AnnealConfig) -> f64 {
    cfg.temp0 * cfg.gamma.powi(k as i32)
}

/// Anything that scores a candidate change point set at a comparison-window
/// half-width (in intervals).
pub trait Objective {
    fn evaluate(&mut self, tau: &ChangePointSet, half_width: usize) -> Result<f64>;
}

impl<F> Objective for F
where
    F: FnMut(&ChangePointSet, usize) -> Result<f64>,
{
    fn evaluate(&mut self, tau: &ChangePointSet, half_width: usize) -> Result<f64> {
        self(tau, half_width)
    }
}

const MAX_NEIGHBOR_DRAWS: usize = 10_000;

/// Random neighbor: every change point moves by an independent uniform offset
/// in `[-radius, radius]`. Draws that collide or leave `(0, grid_len)` are
/// rejected and redrawn.
pub fn neighbors<R: Rng>(
    tau: &ChangePointSet,
    radius: usize,
    grid_len: usize,
    rng: &mut R,
) -> Result<ChangePointSet> {
    if radius == 0 {
        return Err(Error::config("neighbor radius must be at least 1"));
    }
    let r = radius as i64;
    let mut cand = vec![0i64; tau.len()];
    for _ in 0..MAX_NEIGHBOR_DRAWS {
        for (c, &t) in cand.iter_mut().zip(tau.taus()) {
            *c = t as i64 + rng.gen_range(-r..=r);
        }
        cand.sort_unstable();
        let in_bounds = cand.iter().all(|&c| c >= 1 && c < grid_len as i64);
        let ordered = cand.windows(2).all(|w| w[0] < w[1]);
        if in_bounds && ordered {
            return ChangePointSet::new(cand.iter().map(|&c| c as usize).collect());
        }
    }
    Err(Error::NoFeasibleNeighbor {
        attempts: MAX_NEIGHBOR_DRAWS,
    })
}

/// One entry of the visited-solution archive.
#[derive(Clone, Debug, PartialEq)]
pub struct Visit {
    pub k: usize,
    pub tau: ChangePointSet,
    pub eps: f64,
    pub accepted: bool,
    pub temperature: f64,
    pub half_width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnealOutcome {
    pub best: ChangePointSet,
    pub best_eps: f64,
    pub archive: Vec<Visit>,
}

impl AnnealOutcome {
    /// Running minimum of the error, one entry per visit.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.archive
            .iter()
            .scan(f64::INFINITY, |b, v| {
                *b = b.min(v.eps);
                Some(*b)
            })
            .collect()
    }
}

fn accept<R: Rng>(
    eps: f64,
    incumbent: f64,
    k: usize,
    temperature: f64,
    rule: AcceptanceRule,
    rng: &mut R,
) -> bool {
    if eps < incumbent {
        return true;
    }
    let scale = k.max(1) as f64 * temperature;
    match rule {
        AcceptanceRule::Metropolis => {
            let delta = eps - incumbent;
            if delta <= 0.0 {
                return true;
            }
            let p = (-delta / scale).exp();
            p > 0.0 && rng.gen::<f64>() < p
        }
        AcceptanceRule::AsPrinted => {
            let keep = (eps - incumbent / scale).exp().min(1.0);
            !(keep.is_nan() || rng.gen::<f64>() < keep)
        }
    }
}

/// Runs the search from `tau0` on a grid of `grid_len` intervals.
///
/// The incumbent starts as `tau0` with an infinite error, so the first
/// neighbor is always accepted. Steps `1..=k_max` each draw one neighbor of
/// the incumbent; the comparison window shrinks whenever an accepted
/// candidate lowers the incumbent error. Every evaluation is archived and
/// the result is the archive minimizer (earliest on ties). With `k_max = 0`
/// the start point is evaluated once and returned.
pub fn anneal<O: Objective + ?Sized>(
    tau0: &ChangePointSet,
    objective: &mut O,
    cfg: &AnnealConfig,
    grid_len: usize,
    seed: u64,
) -> Result<AnnealOutcome> {
    cfg.validate()?;
    tau0.check_within(grid_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut half_width = cfg.window.initial_half_width;
    let mut archive = Vec::with_capacity(cfg.k_max.max(1));

    if cfg.k_max == 0 {
        let eps = objective.evaluate(tau0, half_width)?;
        archive.push(Visit {
            k: 0,
            tau: tau0.clone(),
            eps,
            accepted: true,
            temperature: temp(0, cfg),
            half_width,
        });
    }

    let mut incumbent = (tau0.clone(), f64::INFINITY);
    for k in 1..=cfg.k_max {
        let cand = neighbors(&incumbent.0, cfg.neighbor_radius, grid_len, &mut rng)?;
        let eps = objective.evaluate(&cand, half_width)?;
        let temperature = temp(k, cfg);
        let accepted = accept(eps, incumbent.1, k, temperature, cfg.acceptance, &mut rng);
        archive.push(Visit {
            k,
            tau: cand.clone(),
            eps,
            accepted,
            temperature,
            half_width,
        });
        if accepted {
            if eps < incumbent.1 {
                half_width = cfg.window.next(half_width);
            }
            incumbent = (cand, eps);
        }
    }

    let best = archive
        .iter()
        .fold(None::<&Visit>, |b, v| match b {
            Some(b) if !(v.eps < b.eps) => Some(b),
            _ => Some(v),
        })
        .expect("archive holds at least one visit");
    Ok(AnnealOutcome {
        best: best.tau.clone(),
        best_eps: best.eps,
        archive,
    })
}

/// Everything the fitness evaluation needs besides the candidate itself.
#[derive(Clone, Debug)]
pub struct PdaInputs {
    /// One arrival trace per realization.
    pub traces: Vec<ArrivalTrace>,
    /// Observed features per realization, aligned with `traces`.
    pub observed: Vec<FeatureSeries>,
    /// Resource level of each segment.
    pub levels: Vec<u32>,
    pub service: ServiceModel,
    pub interval_min: f64,
    pub master_seed: u64,
    pub replications: usize,
    pub objective: ObjectiveKind,
    pub narx: NarxConfig,
    /// When non-empty, each realization tunes its predictor over this grid.
    pub narx_grid: Vec<NarxConfig>,
    /// Feedback mode when testing on observed features.
    pub test_mode: LoopMode,
    /// Shift predictions back by the smallest input delay before scoring.
    pub align_predictions: bool,
}

impl PdaInputs {
    pub fn grid_len(&self) -> usize {
        self.observed.first().map_or(0, FeatureSeries::len)
    }

    pub fn horizon_min(&self) -> f64 {
        self.grid_len() as f64 * self.interval_min
    }

    fn level_bounds(&self) -> (u32, u32) {
        let lo = self.levels.iter().copied().min().unwrap_or(1);
        let hi = self.levels.iter().copied().max().unwrap_or(1);
        (lo, hi)
    }

    fn validate(&self, tau: &ChangePointSet) -> Result<()> {
        if self.traces.len() != self.observed.len() {
            return Err(Error::shape(format!(
                "{} arrival traces but {} observed series",
                self.traces.len(),
                self.observed.len()
            )));
        }
        if self.traces.is_empty() {
            return Err(Error::InsufficientData("no realizations".into()));
        }
        if self.replications == 0 {
            return Err(Error::config("need at least one replication"));
        }
        if tau.len() + 1 != self.levels.len() {
            return Err(Error::shape(format!(
                "{} change points need {} levels, got {}",
                tau.len(),
                tau.len() + 1,
                self.levels.len()
            )));
        }
        tau.check_within(self.grid_len())
    }
}

/// Per-realization outcome of one fitness evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct RealizationFit {
    pub eps: f64,
    pub report: AccuracyReport,
    /// Predicted levels on the observed features after alignment.
    pub predicted_levels: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdaOutcome {
    pub eps: f64,
    pub realizations: Vec<RealizationFit>,
}

fn evaluate_realization(
    inputs: &PdaInputs,
    r: usize,
    schedule: &ResourceSchedule,
    tau: &ChangePointSet,
    half_width: usize,
) -> Result<RealizationFit> {
    let interval = inputs.interval_min;
    let t_len = inputs.grid_len();
    let sims = (0..inputs.replications)
        .map(|s| {
            let seed = derive_seed(inputs.master_seed, purpose::REPLICATION, &[r as u64, s as u64]);
            let log = simulate(&inputs.traces[r], schedule, &inputs.service, seed)?;
            snapshot_features(&log, schedule, interval)
        })
        .collect::<Result<Vec<_>>>()?;
    let simulated = average_series(&sims)?;
    let labels = level_series(schedule, interval, t_len);
    let seed = derive_seed(inputs.master_seed, purpose::NARX_INIT, &[r as u64]);
    let cfg = if inputs.narx_grid.is_empty() {
        inputs.narx.clone()
    } else {
        kfold_tune(&simulated, &labels, &inputs.narx_grid, inputs.narx.kfold_k, seed)?
    };
    let model = train(&simulated, &labels, &cfg, seed)?;
    let mut pred = predict(&model, &inputs.observed[r], &labels, inputs.test_mode)?;
    if inputs.align_predictions {
        pred = align_to_inputs(&pred, cfg.input_delays.lo);
    }
    let (lo, hi) = inputs.level_bounds();
    let predicted_levels = discretize(&pred, lo, hi);
    let sim_levels: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    let report = windowed_accuracy(&predicted_levels, &sim_levels, tau, half_width, interval)?;
    let eps = match inputs.objective {
        ObjectiveKind::OneMinusAccuracy => 1.0 - report.windowed_accuracy,
        ObjectiveKind::TimeDeviation => report.abs_time_deviation_min,
        ObjectiveKind::Mse => windowed_mse(&pred, &labels, tau, half_width),
    };
    Ok(RealizationFit {
        eps,
        report,
        predicted_levels,
    })
}

fn windowed_mse(pred: &[f64], labels: &[f64], centers: &ChangePointSet, half_width: usize) -> f64 {
    let n = pred.len();
    let mut mask = vec![false; n];
    for &c in centers.taus() {
        let lo = c.saturating_sub(half_width);
        mask[lo..(c + half_width).min(n)].iter_mut().for_each(|m| *m = true);
    }
    let (sum, count) = (0..n)
        .filter(|&i| mask[i])
        .fold((0.0, 0usize), |(s, c), i| (s + (pred[i] - labels[i]).powi(2), c + 1));
    sum / count.max(1) as f64
}

/// Scores a candidate set: for every realization, simulate the candidate
/// schedule on that realization's arrivals, average the replications'
/// features, train a predictor on them, test it on the observed features and
/// compare against the simulated levels. Returns the mean error over
/// realizations together with the per-realization details.
pub fn pda(inputs: &PdaInputs, tau: &ChangePointSet, half_width: usize) -> Result<PdaOutcome> {
    inputs.validate(tau)?;
    let schedule = ResourceSchedule::from_grid(
        tau.taus(),
        &inputs.levels,
        inputs.interval_min,
        inputs.horizon_min(),
    )?;
    let realizations = (0..inputs.traces.len())
        .into_par_iter()
        .map(|r| {
            evaluate_realization(inputs, r, &schedule, tau, half_width).map_err(|e| Error::Realization {
                realization: r,
                seed: derive_seed(inputs.master_seed, purpose::NARX_INIT, &[r as u64]),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps = realizations.iter().map(|f| f.eps).sum::<f64>() / realizations.len() as f64;
    Ok(PdaOutcome { eps, realizations })
}

/// [`pda`] as an annealing objective, memoized on `(tau, half_width)`.
/// Every fitness input is seeded independently of the candidate, so repeated
/// candidates score identically.
pub struct PdaObjective<'a> {
    inputs: &'a PdaInputs,
    cache: HashMap<(ChangePointSet, usize), f64>,
}

impl<'a> PdaObjective<'a> {
    pub fn new(inputs: &'a PdaInputs) -> Self {
        Self {
            inputs,
            cache: HashMap::new(),
        }
    }

    /// Number of distinct candidates actually simulated.
    pub fn distinct_evaluations(&self) -> usize {
        self.cache.len()
    }
}

impl Objective for PdaObjective<'_> {
    fn evaluate(&mut self, tau: &ChangePointSet, half_width: usize) -> Result<f64> {
        let key = (tau.clone(), half_width);
        if let Some(&eps) = self.cache.get(&key) {
            return Ok(eps);
        }
        let eps = pda(self.inputs, tau, half_width)?.eps;
        self.cache.insert(key, eps);
        Ok(eps)
    }
}
