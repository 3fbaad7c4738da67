use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpcal::ddcpd::{conciliate, default_penalty, detect_fixed, detect_multi, ChangePointSet, Conciliation, Statistic};
use cpcal::featurizer::snapshot_features;
use cpcal::io;
use cpcal::pipeline::{
    fig4_csv, fig6_csv, generate_scenario, pda_inputs, response_surface, run_full, run_stage_a, run_stage_b,
    PipelineConfig,
};
use cpcal::simkit::{fit_service, ServiceFamily};
use cpcal::{Error, Result};

#[derive(Parser)]
#[command(name = "cpcal", version, about = "Change point detection and calibration of staffing schedules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single setting, e.g. `--set k_max=30`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{kv}` is not KEY=VALUE")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the scenario and write one event log per realization.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn an event log into snapshot features under the configured staffing.
    Featurize {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Data-driven detection on one or more feature files.
    DetectDd {
        /// Feature CSV; repeat for several realizations.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "mean")]
        stat: Statistic,
        /// Penalty per change point, or `auto` for 2 m ln T.
        #[arg(long, default_value = "auto")]
        beta: String,
        /// Detect exactly this many change points instead of penalizing.
        #[arg(long)]
        n_cps: Option<usize>,
        #[arg(long, default_value_t = 10)]
        max_cps: usize,
        #[arg(long, default_value = "median")]
        conciliation: Conciliation,
        #[arg(long, default_value_t = 10.0)]
        interval_min: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulation-driven refinement of a starting estimate.
    DetectPd {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Event log per realization; repeatable.
        #[arg(long = "events", required = true)]
        events: Vec<PathBuf>,
        /// Starting change points; defaults to the data-driven estimate.
        #[arg(long)]
        tau0: Option<PathBuf>,
        /// Known change points, for scoring.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Fit this service family to the logs instead of using the configured one.
        #[arg(long)]
        fit_service: Option<ServiceFamily>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline on the configured scenario and write every artifact.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate the error surface on a grid around the truth, stepping
        /// by this many intervals.
        #[arg(long)]
        surface_step: Option<usize>,
        /// Surface half-range in intervals.
        #[arg(long, default_value_t = 12)]
        surface_range: usize,
    },
}

fn simulate_cmd(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let sc = &cfg.scenario;
    let data = generate_scenario(sc)?;
    for (r, log) in data.ground_truth.iter().enumerate() {
        io::write_event_log(&out.join(format!("events_r{r:03}.csv")), log)?;
    }
    io::write_change_points(&out.join("truth_cps.csv"), &sc.true_cps()?, sc.interval_min)?;
    println!("wrote {} event logs to {}", data.ground_truth.len(), out.display());
    Ok(())
}

fn featurize_cmd(cfg: &PipelineConfig, events: &Path, out: &Path) -> Result<()> {
    let sc = &cfg.scenario;
    let log = io::ingest_event_log(events, sc.horizon_min)?;
    let features = snapshot_features(&log, &sc.true_schedule()?, sc.interval_min)?;
    io::write_features(out, &features)?;
    println!("wrote {} windows to {}", features.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn detect_dd_cmd(
    inputs: &[PathBuf],
    stat: Statistic,
    beta: &str,
    n_cps: Option<usize>,
    max_cps: usize,
    mode: Conciliation,
    interval_min: f64,
    out: &Path,
) -> Result<()> {
    let mut sets = Vec::with_capacity(inputs.len());
    for p in inputs {
        let series = io::read_features(p, interval_min)?;
        let cps = match n_cps {
            Some(n) => detect_fixed(&series, stat, n)?,
            None => {
                let beta = if beta == "auto" {
                    default_penalty(series.dims(), series.len())
                } else {
                    beta.parse()
                        .map_err(|_| Error::Config(format!("bad penalty `{beta}`")))?
                };
                detect_multi(&series, stat, beta, max_cps)?
            }
        };
        sets.push(cps);
    }
    let cps = if sets.len() == 1 {
        sets.pop().expect("one set")
    } else {
        conciliate(&sets, mode)?
    };
    io::write_change_points(out, &cps, interval_min)?;
    println!("change points (min): {:?}", cps.to_minutes(interval_min));
    Ok(())
}

fn detect_pd_cmd(
    cfg: &PipelineConfig,
    events: &[PathBuf],
    tau0: Option<&Path>,
    truth: Option<&Path>,
    family: Option<ServiceFamily>,
    out: &Path,
) -> Result<()> {
    let sc = &cfg.scenario;
    let schedule = sc.true_schedule()?;
    let logs = events
        .iter()
        .map(|p| io::ingest_event_log(p, sc.horizon_min))
        .collect::<Result<Vec<_>>>()?;
    let traces = logs.iter().map(|l| l.arrival_trace()).collect::<Result<Vec<_>>>()?;
    let observed = logs
        .iter()
        .map(|l| snapshot_features(l, &schedule, sc.interval_min))
        .collect::<Result<Vec<_>>>()?;
    let service = match family {
        Some(f) => fit_service(&logs, f)?,
        None => sc.service(),
    };
    let n_cps = sc.levels.len() - 1;
    let mut stage_a = run_stage_a(&observed, cfg.statistic, n_cps, cfg.conciliation)?;
    if let Some(p) = tau0 {
        stage_a.conciliated = io::read_change_points(p, sc.interval_min)?;
    }
    let truth: Option<ChangePointSet> = truth.map(|p| io::read_change_points(p, sc.interval_min)).transpose()?;
    let inputs = pda_inputs(cfg, traces, observed, service);
    let report = run_stage_b(&stage_a, &inputs, &cfg.anneal, truth.as_ref().map(|t| (t, cfg.truth_half_width)))?;
    report.write_all(out)?;
    println!("refined change points (min): {:?}", report.pd_cps.to_minutes(sc.interval_min));
    Ok(())
}

fn report_cmd(cfg: &PipelineConfig, out: &Path, surface_step: Option<usize>, surface_range: usize) -> Result<()> {
    let sc = &cfg.scenario;
    let run = run_full(cfg)?;
    run.report.write_all(out)?;
    io::write_text(&out.join("fig4_features.csv"), &fig4_csv(&run.data.observed[0], &sc.true_schedule()?))?;
    if let Some(step) = surface_step {
        let inputs = pda_inputs(cfg, run.data.traces.clone(), run.data.observed.clone(), sc.service());
        let surface = response_surface(&inputs, &sc.true_cps()?, surface_range, step, cfg.anneal.window.floor)?;
        io::write_text(&out.join("fig6_surface.csv"), &fig6_csv(&surface, sc.interval_min))?;
    }
    print!("{}", run.report.summary_csv());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { cfg, out } => simulate_cmd(&cfg.load()?, &out),
        Command::Featurize { cfg, events, out } => featurize_cmd(&cfg.load()?, &events, &out),
        Command::DetectDd {
            inputs,
            stat,
            beta,
            n_cps,
            max_cps,
            conciliation,
            interval_min,
            out,
        } => detect_dd_cmd(&inputs, stat, &beta, n_cps, max_cps, conciliation, interval_min, &out),
        Command::DetectPd {
            cfg,
            events,
            tau0,
            truth,
            fit_service,
            out,
        } => detect_pd_cmd(&cfg.load()?, &events, tau0.as_deref(), truth.as_deref(), fit_service, &out),
        Command::Report {
            cfg,
            out,
            surface_step,
            surface_range,
        } => report_cmd(&cfg.load()?, &out, surface_step, surface_range),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
