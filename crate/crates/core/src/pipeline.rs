//! End-to-end orchestration: scenario generation, data-driven detection
//! (stage A), simulation-driven refinement (stage B) and reporting.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::annealer::{
    anneal, pda, AcceptanceRule, AnnealConfig, AnnealOutcome, ObjectiveKind, PdaInputs, PdaObjective,
};
use crate::ddcpd::{conciliate, detect_fixed, ChangePointSet, Conciliation, Statistic};
use crate::error::{Error, Result};
use crate::featurizer::{level_series, snapshot_features, FeatureSeries};
use crate::io;
use crate::narx::{windowed_accuracy, Delays, LoopMode, NarxConfig};
use crate::seed::{derive_seed, purpose};
use crate::simkit::{
    sample_arrivals, simulate, ArrivalTrace, EventLog, RateProfile, ResourceSchedule, ServiceFamily,
    ServiceModel,
};

/// The synthetic system the pipeline is exercised on.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub n_realizations: usize,
    pub horizon_min: f64,
    pub interval_min: f64,
    /// True change point times; multiples of `interval_min`.
    pub true_cps_min: Vec<f64>,
    pub levels: Vec<u32>,
    pub rate_breaks_min: Vec<f64>,
    pub rates_per_min: Vec<f64>,
    pub service_family: ServiceFamily,
    pub service_mean: f64,
    /// Log-scale standard deviation, used by the lognormal family only.
    pub service_sigma: f64,
    pub master_seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n_realizations: 30,
            horizon_min: 1440.0,
            interval_min: 10.0,
            true_cps_min: vec![600.0, 1200.0],
            levels: vec![1, 3, 2],
            rate_breaks_min: vec![630.0, 1140.0],
            rates_per_min: vec![0.84, 1.8, 0.9],
            service_family: ServiceFamily::Exponential,
            service_mean: 1.0,
            service_sigma: 0.5,
            master_seed: 2024,
        }
    }
}

impl Scenario {
    pub fn grid_len(&self) -> usize {
        (self.horizon_min / self.interval_min).round() as usize
    }

    pub fn service(&self) -> ServiceModel {
        match self.service_family {
            ServiceFamily::Exponential => ServiceModel::Exponential { mean: self.service_mean },
            ServiceFamily::Deterministic => ServiceModel::Deterministic { value: self.service_mean },
            ServiceFamily::LogNormal => ServiceModel::LogNormal {
                mu: self.service_mean.ln() - 0.5 * self.service_sigma * self.service_sigma,
                sigma: self.service_sigma,
            },
        }
    }

    pub fn arrival_profile(&self) -> Result<RateProfile> {
        RateProfile::new(self.rate_breaks_min.clone(), self.rates_per_min.clone())
    }

    pub fn true_schedule(&self) -> Result<ResourceSchedule> {
        ResourceSchedule::new(self.true_cps_min.clone(), self.levels.clone(), self.horizon_min)
    }

    /// True change points on the interval grid.
    pub fn true_cps(&self) -> Result<ChangePointSet> {
        ChangePointSet::new(
            self.true_cps_min
                .iter()
                .map(|t| (t / self.interval_min).round() as usize)
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 {
            return Err(Error::config("need at least one realization"));
        }
        if !(self.interval_min > 0.0 && self.horizon_min > 0.0) {
            return Err(Error::config("horizon and interval must be positive"));
        }
        let ratio = self.horizon_min / self.interval_min;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::config("horizon must be a whole number of intervals"));
        }
        if let Some(l) = self.levels.iter().find(|l| !(1..=3).contains(*l)) {
            return Err(Error::config(format!("resource level {l} outside [1, 3]")));
        }
        for t in &self.true_cps_min {
            let r = t / self.interval_min;
            if (r - r.round()).abs() > 1e-9 {
                return Err(Error::config(format!("change point {t} is not on the interval grid")));
            }
        }
        self.true_schedule()?;
        self.true_cps()?.check_within(self.grid_len())?;
        self.arrival_profile()?;
        self.service().validate()
    }
}

/// Everything a run needs, settable from a flat `key = value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub scenario: Scenario,
    pub statistic: Statistic,
    pub conciliation: Conciliation,
    pub narx: NarxConfig,
    pub anneal: AnnealConfig,
    pub test_mode: LoopMode,
    pub align_predictions: bool,
    /// Half-width (intervals) of the windows used to score per-realization
    /// transitions against ground truth.
    pub truth_half_width: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            statistic: Statistic::Mean,
            conciliation: Conciliation::Median,
            narx: NarxConfig {
                training_mode: LoopMode::Closed,
                epochs: 200,
                learning_rate: 0.03,
                val_blocks: 6,
                ..NarxConfig::default()
            },
            anneal: AnnealConfig {
                objective: ObjectiveKind::TimeDeviation,
                neighbor_radius: 3,
                ..AnnealConfig::default()
            },
            test_mode: LoopMode::Closed,
            align_predictions: true,
            truth_half_width: 12,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(format!("bad value `{value}` for `{key}`"))),
    }
}

impl PipelineConfig {
    /// Applies one setting. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        let sc = &mut self.scenario;
        match key {
            "n_realizations" => sc.n_realizations = parse(key, value)?,
            "horizon_min" => sc.horizon_min = parse(key, value)?,
            "interval_min" => sc.interval_min = parse(key, value)?,
            "true_cps_min" => sc.true_cps_min = parse_list(key, value)?,
            "levels" => sc.levels = parse_list(key, value)?,
            "rate_breaks_min" => sc.rate_breaks_min = parse_list(key, value)?,
            "rates_per_min" => sc.rates_per_min = parse_list(key, value)?,
            "service_family" => sc.service_family = value.parse()?,
            "service_mean" => sc.service_mean = parse(key, value)?,
            "service_sigma" => sc.service_sigma = parse(key, value)?,
            "master_seed" => sc.master_seed = parse(key, value)?,
            "statistic" => self.statistic = value.parse()?,
            "conciliation" => self.conciliation = value.parse()?,
            "input_delays" => self.narx.input_delays = value.parse::<Delays>()?,
            "feedback_delays" => self.narx.feedback_delays = value.parse::<Delays>()?,
            "hidden_size" => self.narx.hidden_size = parse(key, value)?,
            "epochs" => self.narx.epochs = parse(key, value)?,
            "patience" => self.narx.patience = parse(key, value)?,
            "learning_rate" => self.narx.learning_rate = parse(key, value)?,
            "train_fraction" => self.narx.train_fraction = parse(key, value)?,
            "val_blocks" => self.narx.val_blocks = parse(key, value)?,
            "kfold_k" => self.narx.kfold_k = parse(key, value)?,
            "training_mode" => self.narx.training_mode = value.parse()?,
            "test_mode" => self.test_mode = value.parse()?,
            "align_predictions" => self.align_predictions = parse_bool(key, value)?,
            "k_max" => self.anneal.k_max = parse(key, value)?,
            "neighbor_radius" => self.anneal.neighbor_radius = parse(key, value)?,
            "temp0" => self.anneal.temp0 = parse(key, value)?,
            "gamma" => self.anneal.gamma = parse(key, value)?,
            "replications" => self.anneal.replications = parse(key, value)?,
            "objective" => self.anneal.objective = value.parse::<ObjectiveKind>()?,
            "acceptance" => self.anneal.acceptance = value.parse::<AcceptanceRule>()?,
            "window_half_width" => self.anneal.window.initial_half_width = parse(key, value)?,
            "window_shrink" => self.anneal.window.shrink = parse(key, value)?,
            "window_floor" => self.anneal.window.floor = parse(key, value)?,
            "truth_half_width" => self.truth_half_width = parse(key, value)?,
            other => return Err(Error::config(format!("unknown setting `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "<config>".into(),
                line: i as u64 + 1,
                message: format!("expected key = value, got `{line}`"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                path: "<config>".into(),
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.narx.validate()?;
        self.anneal.validate()
    }
}

/// Per-realization data generated from a scenario.
#[derive(Clone, Debug)]
pub struct ScenarioData {
    pub traces: Vec<ArrivalTrace>,
    /// Logs of the system run under the true schedule. Only used for scoring
    /// and for writing out observed data.
    pub ground_truth: Vec<EventLog>,
    pub observed: Vec<FeatureSeries>,
}

/// Samples arrivals, simulates the true schedule and featurizes each
/// realization.
pub fn generate_scenario(sc: &Scenario) -> Result<ScenarioData> {
    sc.validate()?;
    let profile = sc.arrival_profile()?;
    let schedule = sc.true_schedule()?;
    let service = sc.service();
    let per_realization = (0..sc.n_realizations)
        .into_par_iter()
        .map(|r| {
            let r64 = r as u64;
            let trace = sample_arrivals(
                &profile,
                sc.horizon_min,
                derive_seed(sc.master_seed, purpose::ARRIVALS, &[r64]),
            )?;
            let log = simulate(
                &trace,
                &schedule,
                &service,
                derive_seed(sc.master_seed, purpose::GROUND_TRUTH, &[r64]),
            )?;
            let observed = snapshot_features(&log, &schedule, sc.interval_min)?;
            Ok((trace, log, observed))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = ScenarioData {
        traces: Vec::with_capacity(sc.n_realizations),
        ground_truth: Vec::with_capacity(sc.n_realizations),
        observed: Vec::with_capacity(sc.n_realizations),
    };
    for (trace, log, observed) in per_realization {
        data.traces.push(trace);
        data.ground_truth.push(log);
        data.observed.push(observed);
    }
    Ok(data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageA {
    pub per_realization: Vec<ChangePointSet>,
    pub conciliated: ChangePointSet,
}

/// Detects `n_cps` change points in every realization and conciliates them.
pub fn run_stage_a(
    observed: &[FeatureSeries],
    statistic: Statistic,
    n_cps: usize,
    mode: Conciliation,
) -> Result<StageA> {
    if observed.is_empty() {
        return Err(Error::InsufficientData("stage A needs at least one realization".into()));
    }
    let per_realization = observed
        .par_iter()
        .map(|s| detect_fixed(s, statistic, n_cps))
        .collect::<Result<Vec<_>>>()?;
    let conciliated = conciliate(&per_realization, mode)?;
    Ok(StageA {
        per_realization,
        conciliated,
    })
}

/// Builds the fitness inputs for stage B from generated or ingested data.
pub fn pda_inputs(cfg: &PipelineConfig, traces: Vec<ArrivalTrace>, observed: Vec<FeatureSeries>, service: ServiceModel) -> PdaInputs {
    PdaInputs {
        traces,
        observed,
        levels: cfg.scenario.levels.clone(),
        service,
        interval_min: cfg.scenario.interval_min,
        master_seed: cfg.scenario.master_seed,
        replications: cfg.anneal.replications,
        objective: cfg.anneal.objective,
        narx: cfg.narx.clone(),
        narx_grid: Vec::new(),
        test_mode: cfg.test_mode,
        align_predictions: cfg.align_predictions,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Win,
    Loss,
    Tie,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Win => "win",
            Outcome::Loss => "loss",
            Outcome::Tie => "tie",
        }
    }
}

/// One realization's comparison against ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct RealizationRow {
    pub realization: usize,
    pub dd_cps: ChangePointSet,
    /// Predicted transition times from the stage-B predictor, if found.
    pub pd_cp_times: Vec<Option<f64>>,
    pub dd_deviation_min: f64,
    pub pd_deviation_min: f64,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub cps: ChangePointSet,
    pub rows: Vec<RealizationRow>,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub dd_total_min: f64,
    pub pd_total_min: f64,
    /// Deviation of the conciliated DD estimate from the truth.
    pub dd_cp_deviation_min: f64,
    /// Deviation of the refined estimate from the truth.
    pub pd_cp_deviation_min: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub interval_min: f64,
    pub dd_cps: ChangePointSet,
    pub pd_cps: ChangePointSet,
    pub anneal: AnnealOutcome,
    /// Error of each realization's predictor at the refined estimate.
    pub pd_eps: Vec<f64>,
    pub truth: Option<Truth>,
}

/// Refines `stage_a.conciliated` by annealing and, when ground truth is
/// given, scores both estimates per realization.
pub fn run_stage_b(
    stage_a: &StageA,
    inputs: &PdaInputs,
    cfg: &AnnealConfig,
    truth: Option<(&ChangePointSet, usize)>,
) -> Result<RunReport> {
    let grid_len = inputs.grid_len();
    let mut objective = PdaObjective::new(inputs);
    let seed = derive_seed(inputs.master_seed, purpose::ANNEAL, &[]);
    let outcome = anneal(&stage_a.conciliated, &mut objective, cfg, grid_len, seed)?;
    let final_half_width = outcome.archive.last().map_or(cfg.window.initial_half_width, |v| v.half_width);
    let detail = pda(inputs, &outcome.best, final_half_width)?;
    let pd_eps = detail.realizations.iter().map(|r| r.eps).collect();

    let truth = match truth {
        None => None,
        Some((true_cps, half_width)) => {
            let interval = inputs.interval_min;
            let schedule = ResourceSchedule::from_grid(true_cps.taus(), &inputs.levels, interval, inputs.horizon_min())?;
            let true_levels: Vec<u32> = level_series(&schedule, interval, grid_len)
                .iter()
                .map(|&l| l as u32)
                .collect();
            let mut rows = Vec::with_capacity(detail.realizations.len());
            for (r, fit) in detail.realizations.iter().enumerate() {
                let dd = stage_a.per_realization[r].clone();
                let dd_dev = dd.abs_deviation_min(true_cps, interval)?;
                let pd = windowed_accuracy(&fit.predicted_levels, &true_levels, true_cps, half_width, interval)?;
                let pd_dev = pd.abs_time_deviation_min;
                let outcome = if pd_dev < dd_dev {
                    Outcome::Win
                } else if pd_dev > dd_dev {
                    Outcome::Loss
                } else {
                    Outcome::Tie
                };
                rows.push(RealizationRow {
                    realization: r,
                    dd_cps: dd,
                    pd_cp_times: pd.predicted_cp_times,
                    dd_deviation_min: dd_dev,
                    pd_deviation_min: pd_dev,
                    outcome,
                });
            }
            let count = |o: Outcome| rows.iter().filter(|r| r.outcome == o).count();
            Some(Truth {
                cps: true_cps.clone(),
                wins: count(Outcome::Win),
                losses: count(Outcome::Loss),
                ties: count(Outcome::Tie),
                dd_total_min: rows.iter().map(|r| r.dd_deviation_min).sum(),
                pd_total_min: rows.iter().map(|r| r.pd_deviation_min).sum(),
                dd_cp_deviation_min: stage_a.conciliated.abs_deviation_min(true_cps, interval)?,
                pd_cp_deviation_min: outcome.best.abs_deviation_min(true_cps, interval)?,
                rows,
            })
        }
    };

    Ok(RunReport {
        interval_min: inputs.interval_min,
        dd_cps: stage_a.conciliated.clone(),
        pd_cps: outcome.best.clone(),
        anneal: outcome,
        pd_eps,
        truth,
    })
}

/// Scores every candidate in a box of `±range` intervals (stepping by
/// `step`) around `center`. Candidates that are not strictly increasing
/// inside the grid are skipped.
pub fn response_surface(
    inputs: &PdaInputs,
    center: &ChangePointSet,
    range: usize,
    step: usize,
    half_width: usize,
) -> Result<Vec<(ChangePointSet, f64)>> {
    if step == 0 {
        return Err(Error::config("surface step must be at least 1"));
    }
    let offsets: Vec<i64> = (-(range as i64)..=range as i64).step_by(step).collect();
    let mut candidates: Vec<Vec<i64>> = vec![Vec::new()];
    for &c in center.taus() {
        candidates = candidates
            .into_iter()
            .flat_map(|prefix| {
                offsets.iter().map(move |&o| {
                    let mut next = prefix.clone();
                    next.push(c as i64 + o);
                    next
                })
            })
            .collect();
    }
    let grid_len = inputs.grid_len() as i64;
    let mut out = Vec::new();
    for cand in candidates {
        let feasible = cand.iter().all(|&t| t >= 1 && t < grid_len) && cand.windows(2).all(|w| w[0] < w[1]);
        if !feasible {
            continue;
        }
        let tau = ChangePointSet::new(cand.iter().map(|&t| t as usize).collect())?;
        let eps = pda(inputs, &tau, half_width)?.eps;
        out.push((tau, eps));
    }
    Ok(out)
}

fn cp_cells(cps: &ChangePointSet, interval: f64) -> String {
    cps.to_minutes(interval)
        .iter()
        .map(|t| format!("{t:.6}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// `k,tau_1_min,...,eps,accepted,temperature,window_half_width_min`.
pub fn anneal_trace_csv(outcome: &AnnealOutcome, interval_min: f64) -> String {
    let n = outcome.archive.first().map_or(0, |v| v.tau.len());
    let mut out = String::from("k");
    for i in 1..=n {
        let _ = write!(out, ",tau_{i}_min");
    }
    out.push_str(",eps,accepted,temperature,window_half_width_min\n");
    for v in &outcome.archive {
        let _ = writeln!(
            out,
            "{},{},{:.6},{},{:.6e},{:.6}",
            v.k,
            cp_cells(&v.tau, interval_min),
            v.eps,
            v.accepted,
            v.temperature,
            v.half_width as f64 * interval_min
        );
    }
    out
}

impl RunReport {
    /// Per-realization rows. Without ground truth only the stage-B error is
    /// reported.
    pub fn report_csv(&self) -> String {
        let mut out = String::new();
        match &self.truth {
            Some(truth) => {
                out.push_str("realization,dd_deviation_min,pd_deviation_min,outcome\n");
                for r in &truth.rows {
                    let _ = writeln!(
                        out,
                        "{},{:.6},{:.6},{}",
                        r.realization,
                        r.dd_deviation_min,
                        r.pd_deviation_min,
                        r.outcome.as_str()
                    );
                }
            }
            None => {
                out.push_str("realization,eps\n");
                for (r, e) in self.pd_eps.iter().enumerate() {
                    let _ = writeln!(out, "{r},{e:.6}");
                }
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let i = self.interval_min;
        let mut out = String::from("key,value\n");
        let _ = writeln!(out, "dd_cps_min,\"{}\"", cp_cells(&self.dd_cps, i));
        let _ = writeln!(out, "pd_cps_min,\"{}\"", cp_cells(&self.pd_cps, i));
        let _ = writeln!(out, "pd_eps,{:.6}", self.anneal.best_eps);
        let _ = writeln!(out, "evaluations,{}", self.anneal.archive.len());
        if let Some(t) = &self.truth {
            let _ = writeln!(out, "true_cps_min,\"{}\"", cp_cells(&t.cps, i));
            let _ = writeln!(out, "dd_cp_deviation_min,{:.6}", t.dd_cp_deviation_min);
            let _ = writeln!(out, "pd_cp_deviation_min,{:.6}", t.pd_cp_deviation_min);
            let _ = writeln!(out, "dd_total_deviation_min,{:.6}", t.dd_total_min);
            let _ = writeln!(out, "pd_total_deviation_min,{:.6}", t.pd_total_min);
            let _ = writeln!(out, "wins,{}", t.wins);
            let _ = writeln!(out, "losses,{}", t.losses);
            let _ = writeln!(out, "ties,{}", t.ties);
        }
        out
    }

    /// Per-realization deviation of both methods, for plotting.
    pub fn fig7_csv(&self) -> Option<String> {
        let t = self.truth.as_ref()?;
        let mut out = String::from("realization,dd_deviation_min,pd_deviation_min\n");
        for r in &t.rows {
            let _ = writeln!(out, "{},{:.6},{:.6}", r.realization + 1, r.dd_deviation_min, r.pd_deviation_min);
        }
        Some(out)
    }

    /// Writes report, summary, change point, trace and plot CSVs into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        let i = self.interval_min;
        io::write_text(&dir.join("report.csv"), &self.report_csv())?;
        io::write_text(&dir.join("summary.csv"), &self.summary_csv())?;
        io::write_change_points(&dir.join("cps_dd.csv"), &self.dd_cps, i)?;
        io::write_change_points(&dir.join("cps_pd.csv"), &self.pd_cps, i)?;
        io::write_text(&dir.join("anneal_trace.csv"), &anneal_trace_csv(&self.anneal, i))?;
        if let Some(fig7) = self.fig7_csv() {
            io::write_text(&dir.join("fig7_deviation.csv"), &fig7)?;
        }
        Ok(())
    }
}

/// Observed features with the resource level in effect, for plotting.
pub fn fig4_csv(series: &FeatureSeries, schedule: &ResourceSchedule) -> String {
    let levels = level_series(schedule, series.interval_min(), series.len());
    let mut out = format!("t_min,{},level\n", series.names().join(","));
    for (t, row) in series.rows().enumerate() {
        let _ = write!(out, "{:.6}", t as f64 * series.interval_min());
        for v in row {
            let _ = write!(out, ",{v:.6}");
        }
        let _ = writeln!(out, ",{}", levels[t]);
    }
    out
}

pub fn fig6_csv(surface: &[(ChangePointSet, f64)], interval_min: f64) -> String {
    let n = surface.first().map_or(0, |(t, _)| t.len());
    let mut out = String::new();
    for i in 1..=n {
        let _ = write!(out, "tau_{i}_min,");
    }
    out.push_str("eps\n");
    for (tau, eps) in surface {
        let _ = writeln!(out, "{},{eps:.6}", cp_cells(tau, interval_min));
    }
    out
}

/// Everything produced by [`run_full`].
#[derive(Clone, Debug)]
pub struct FullRun {
    pub data: ScenarioData,
    pub stage_a: StageA,
    pub report: RunReport,
}

/// Generates the scenario and runs both stages, scoring against the truth.
pub fn run_full(cfg: &PipelineConfig) -> Result<FullRun> {
    cfg.validate()?;
    let sc = &cfg.scenario;
    let data = generate_scenario(sc)?;
    let true_cps = sc.true_cps()?;
    let stage_a = run_stage_a(&data.observed, cfg.statistic, true_cps.len(), cfg.conciliation)?;
    let inputs = pda_inputs(cfg, data.traces.clone(), data.observed.clone(), sc.service());
    let report = run_stage_b(&stage_a, &inputs, &cfg.anneal, Some((&true_cps, cfg.truth_half_width)))?;
    Ok(FullRun { data, stage_a, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_shapes() {
        let sc = Scenario { n_realizations: 2, ..Scenario::default() };
        let data = generate_scenario(&sc).unwrap();
        assert_eq!(data.observed.len(), 2);
        for s in &data.observed {
            assert_eq!((s.len(), s.dims()), (144, 6));
        }
    }

    #[test]
    fn config_round_trip_keys() {
        let cfg = PipelineConfig::parse(
            "# comment\nn_realizations = 3\ntrue_cps_min = 300, 900\ninput_delays = 1:3\nobjective = mse\nalign_predictions = no\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario.n_realizations, 3);
        assert_eq!(cfg.scenario.true_cps_min, vec![300.0, 900.0]);
        assert_eq!(cfg.narx.input_delays, Delays::new(1, 3).unwrap());
        assert_eq!(cfg.anneal.objective, ObjectiveKind::Mse);
        assert!(!cfg.align_predictions);
    }

    #[test]
    fn config_errors_name_line() {
        match PipelineConfig::parse("k_max = 5\nbogus = 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn levels_outside_range_rejected() {
        let sc = Scenario { levels: vec![1, 4, 2], ..Scenario::default() };
        assert!(matches!(sc.validate(), Err(Error::Config(_))));
    }
}
