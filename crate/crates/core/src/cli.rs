//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid configuration or input,
//! 3 certification failure, 4 numerical abort. Failures are reported on
//! stderr as a single JSON object.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::consensus::RelativeClosedLoop;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics_with_window, MetricsReport, DEFAULT_STEADY_WINDOW};
use crate::monitor::{decrease_test, ConstantsEstimate, DecreaseReport, GainThresholds, Monitor};
use crate::output::{load_trajectory_csv, save_trajectory_csv, write_json};
use crate::scenario::{load_scenario, Scenario};
use crate::sim::{run, stable_dt};

#[derive(Debug, Parser)]
#[command(name = "rendezvous", version, about = "Rendezvous simulator for thrust-and-torque actuated rigid bodies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the sensor digraph and certify the consensus gains.
    Check(ScenarioArg),
    /// Simulate one scenario; writes a trajectory CSV and a metrics JSON.
    Run {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Fraction of the run at the end used for steady-state metrics.
        #[arg(long, default_value_t = DEFAULT_STEADY_WINDOW)]
        steady_window: f64,
    },
    /// Run a grid of gains and seeds in parallel; writes one merged JSON report.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Gain pair `k1,k2`; repeat for a grid. Defaults to the scenario gains.
        #[arg(long = "gains", value_parser = parse_gain_pair)]
        gains: Vec<(f64, f64)>,
        /// Number of consecutive seeds starting at the scenario (or --seed) seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Keep the configured step even when the rate loop is too stiff for it.
        #[arg(long)]
        fixed_dt: bool,
        /// Also write a trajectory CSV per run.
        #[arg(long)]
        csv: bool,
        #[arg(long, default_value_t = DEFAULT_STEADY_WINDOW)]
        steady_window: f64,
    },
    /// Estimate the constants of the stability argument by sampling.
    Constants {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate W along a recorded run and test its decrease above δ.
    Monitor {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Trajectory CSV written by `run`.
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        /// Fraction of the run at the end used to calibrate δ.
        #[arg(long, default_value_t = DEFAULT_STEADY_WINDOW)]
        window: f64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ScenarioArg {
    /// Scenario file, or the name of a bundled scenario (paper_fig5, paper_fig6).
    scenario: String,
}

#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
}

impl Overrides {
    fn apply(&self, s: &mut Scenario) -> Result<()> {
        if let Some(v) = self.seed {
            s.sim.seed = v;
        }
        if let Some(v) = self.dt {
            s.sim.dt = v;
        }
        if let Some(v) = self.t_final {
            s.sim.t_final = v;
        }
        if let Some(v) = self.record_every {
            s.sim.record_every = v;
        }
        let errors = s.sim.validate();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}

fn parse_gain_pair(text: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = text.split_once(',').ok_or_else(|| format!("expected k1,k2 but got '{text}'"))?;
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("'{s}': {e}"));
    Ok((parse(a)?, parse(b)?))
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) | Error::InvalidParameter(_) | Error::NotRotation { .. } | Error::Data(_) | Error::Csv(_) => 2,
        Error::NotHurwitz { .. }
        | Error::NotPositiveDefinite(_)
        | Error::LyapunovResidual { .. }
        | Error::EigenNonConvergence { .. } => 3,
        Error::NonFinite { .. } => 4,
        _ => 1,
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    exit_code: i32,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    details: Vec<String>,
}

fn error_kind(error: &Error) -> &'static str {
    match error {
        Error::Config(_) | Error::InvalidParameter(_) | Error::NotRotation { .. } => "config",
        Error::Data(_) | Error::Csv(_) => "input",
        Error::NotHurwitz { .. }
        | Error::NotPositiveDefinite(_)
        | Error::LyapunovResidual { .. }
        | Error::EigenNonConvergence { .. } => "certification",
        Error::NonFinite { .. } => "numerical",
        Error::Io(_) => "io",
        _ => "internal",
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(error) => {
            let code = exit_code(&error);
            let report = ErrorReport {
                error: error_kind(&error),
                exit_code: code,
                message: error.to_string(),
                details: match &error {
                    Error::Config(list) => list.clone(),
                    _ => Vec::new(),
                },
            };
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            code
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Check(arg) => check(&load_scenario(&arg.scenario)?),
        Command::Run { scenario, overrides, out_dir, steady_window } => {
            let mut s = load_scenario(&scenario.scenario)?;
            overrides.apply(&mut s)?;
            run_one(&s, &out_dir, steady_window)
        }
        Command::Sweep { scenario, overrides, out_dir, gains, seeds, fixed_dt, csv, steady_window } => {
            let mut s = load_scenario(&scenario.scenario)?;
            overrides.apply(&mut s)?;
            sweep(&s, &out_dir, &gains, seeds, !fixed_dt, csv, steady_window)
        }
        Command::Constants { scenario, samples, seed, out_dir } => {
            constants(&load_scenario(&scenario.scenario)?, samples, seed, out_dir.as_deref())
        }
        Command::Monitor { scenario, csv, alpha, delta, window, out_dir } => {
            monitor(&load_scenario(&scenario.scenario)?, &csv, alpha, delta, window, out_dir.as_deref())
        }
    }
}

#[derive(Serialize)]
struct CheckReport {
    scenario: String,
    vehicles: usize,
    /// 1-based label.
    globally_reachable_node: Option<usize>,
    certified: bool,
    spectral_abscissa: f64,
    lyapunov_p_eigen_range: Option<[f64; 2]>,
    gain_warnings: Vec<String>,
}

fn check(s: &Scenario) -> Result<i32> {
    let law = s.law()?;
    let rcl = RelativeClosedLoop::build(&law)?;
    let abscissa = rcl.spectral_abscissa()?;
    let certified = rcl.certify()?;
    let lyap = if certified { Some(rcl.synthesize_p_identity()?) } else { None };
    let report = CheckReport {
        scenario: s.name.clone(),
        vehicles: s.len(),
        globally_reachable_node: s.graph.globally_reachable_node().map(|v| v + 1),
        certified,
        spectral_abscissa: abscissa,
        lyapunov_p_eigen_range: lyap.map(|l| [l.lambda_min_p(), l.lambda_max_p()]),
        gain_warnings: s.control.warnings(),
    };
    print_json(&report)?;
    Ok(if report.certified && report.globally_reachable_node.is_some() { 0 } else { 3 })
}

#[derive(Serialize)]
struct RunReport {
    scenario: String,
    seed: u64,
    dt: f64,
    t_final: f64,
    record_every: usize,
    k1: f64,
    k2: f64,
    warnings: Vec<String>,
    metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    monitor_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decrease: Option<DecreaseReport>,
}

fn simulate(s: &Scenario, steady_window: f64) -> Result<(crate::sim::Trajectory, RunReport)> {
    let traj = run(s)?;
    let metrics = compute_metrics_with_window(&traj, steady_window)?;
    let (alpha, decrease) = match (&traj.monitor, &s.monitor) {
        (Some(samples), Some(cfg)) => {
            let alpha = samples.first().map(|m| if m.w_tran > 0.0 { (m.w - m.w_rot) / m.w_tran } else { f64::NAN });
            (alpha, Some(decrease_test(&traj.times, samples, cfg.delta, steady_window)?))
        }
        _ => (None, None),
    };
    let report = RunReport {
        scenario: s.name.clone(),
        seed: s.sim.seed,
        dt: s.sim.dt,
        t_final: traj.t_final,
        record_every: s.sim.record_every,
        k1: s.control.k1,
        k2: s.control.k2,
        warnings: traj.warnings.clone(),
        metrics,
        monitor_alpha: alpha,
        decrease,
    };
    Ok((traj, report))
}

fn run_one(s: &Scenario, out_dir: &Path, steady_window: f64) -> Result<i32> {
    let (traj, report) = simulate(s, steady_window)?;
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{}.csv", s.name));
    let json_path = out_dir.join(format!("{}.metrics.json", s.name));
    save_trajectory_csv(&traj, &csv_path)?;
    write_json(&report, &json_path)?;
    print_json(&serde_json::json!({
        "csv": csv_path,
        "metrics": json_path,
        "steady_state_max_distance": report.metrics.steady_state_max_distance,
        "max_peak_thrust": report.metrics.max_peak_thrust,
        "max_peak_torque": report.metrics.max_peak_torque,
    }))?;
    Ok(0)
}

#[derive(Serialize)]
struct SweepEntry {
    k1: f64,
    k2: f64,
    seed: u64,
    dt: f64,
    record_every: usize,
    steady_state_max_distance: f64,
    metrics: MetricsReport,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct GainSummary {
    k1: f64,
    k2: f64,
    runs: usize,
    median_steady_state_max_distance: f64,
    max_steady_state_max_distance: f64,
}

#[derive(Serialize)]
struct SweepReport {
    scenario: String,
    dt_refined: bool,
    runs: Vec<SweepEntry>,
    summary: Vec<GainSummary>,
}

/// Copy of `base` with gains `(k1, k2)` and seed `seed`. With `refine`, the
/// step is shortened when the rate loop is too stiff for it and the output
/// stride is stretched to keep the recorded grid.
pub fn sweep_variant(base: &Scenario, k1: f64, k2: f64, seed: u64, refine: bool) -> Result<Scenario> {
    let mut s = base.clone();
    s.control = crate::control::ControlGains::new(k1, k2)?;
    s.sim.seed = seed;
    if refine {
        let stiffness = s.fleet()?.rate_stiffness();
        let dt = stable_dt(s.sim.dt, stiffness);
        let factor = (s.sim.dt / dt).round() as usize;
        s.sim.dt = dt;
        s.sim.record_every *= factor;
    }
    Ok(s)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => values[n / 2],
        _ => 0.5 * (values[n / 2 - 1] + values[n / 2]),
    }
}

fn sweep(
    base: &Scenario,
    out_dir: &Path,
    gains: &[(f64, f64)],
    seeds: u64,
    refine: bool,
    csv: bool,
    steady_window: f64,
) -> Result<i32> {
    let grid: Vec<(f64, f64)> =
        if gains.is_empty() { vec![(base.control.k1, base.control.k2)] } else { gains.to_vec() };
    let jobs: Vec<(f64, f64, u64)> =
        grid.iter().flat_map(|&(k1, k2)| (0..seeds.max(1)).map(move |k| (k1, k2, base.sim.seed + k))).collect();
    std::fs::create_dir_all(out_dir)?;
    let runs: Vec<SweepEntry> = jobs
        .par_iter()
        .map(|&(k1, k2, seed)| {
            let s = sweep_variant(base, k1, k2, seed, refine)?;
            let (traj, report) = simulate(&s, steady_window)?;
            if csv {
                save_trajectory_csv(&traj, &out_dir.join(format!("{}_k1_{k1}_k2_{k2}_seed_{seed}.csv", s.name)))?;
            }
            Ok(SweepEntry {
                k1,
                k2,
                seed,
                dt: s.sim.dt,
                record_every: s.sim.record_every,
                steady_state_max_distance: report.metrics.steady_state_max_distance,
                metrics: report.metrics,
                warnings: report.warnings,
            })
        })
        .collect::<Result<_>>()?;
    let summary = grid
        .iter()
        .map(|&(k1, k2)| {
            let mut d: Vec<f64> =
                runs.iter().filter(|r| r.k1 == k1 && r.k2 == k2).map(|r| r.steady_state_max_distance).collect();
            GainSummary {
                k1,
                k2,
                runs: d.len(),
                max_steady_state_max_distance: d.iter().copied().fold(0.0, f64::max),
                median_steady_state_max_distance: median(&mut d),
            }
        })
        .collect();
    let report = SweepReport { scenario: base.name.clone(), dt_refined: refine, runs, summary };
    let path = out_dir.join(format!("{}.sweep.json", base.name));
    write_json(&report, &path)?;
    print_json(&serde_json::json!({ "report": path, "summary": report.summary }))?;
    Ok(0)
}

#[derive(Serialize)]
struct ConstantsReport {
    scenario: String,
    estimates: ConstantsEstimate,
    gain_conditions: GainThresholds,
}

fn constants(s: &Scenario, samples: Option<usize>, seed: Option<u64>, out_dir: Option<&Path>) -> Result<i32> {
    let cfg = s.monitor.clone().unwrap_or_default();
    let samples = samples.unwrap_or(cfg.sample_count);
    let seed = seed.unwrap_or(cfg.seed);
    let fleet = s.fleet()?;
    let monitor = Monitor::new(&fleet, 0.0)?;
    let estimates = monitor.estimate_constants(samples, seed);
    let alpha = cfg.alpha.unwrap_or(1.1 * estimates.alpha_lower_bound());
    let report = ConstantsReport {
        scenario: s.name.clone(),
        gain_conditions: estimates.gain_thresholds(alpha, cfg.varrho, s.control.k1, s.len()),
        estimates,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&report, &dir.join(format!("{}.constants.json", s.name)))?;
    }
    print_json(&report)?;
    Ok(0)
}

#[derive(Serialize)]
struct MonitorReport {
    scenario: String,
    alpha: f64,
    samples: usize,
    final_w: f64,
    final_gamma_dist: f64,
    decrease: DecreaseReport,
}

fn monitor(
    s: &Scenario,
    csv: &Path,
    alpha: Option<f64>,
    delta: Option<f64>,
    window: f64,
    out_dir: Option<&Path>,
) -> Result<i32> {
    let recorded = load_trajectory_csv(csv)?;
    if recorded.states.first().is_some_and(|row| row.len() != s.len()) {
        return Err(Error::Data(format!("CSV holds {} vehicles, scenario has {}", recorded.states[0].len(), s.len())));
    }
    let mut cfg = s.monitor.clone().unwrap_or_default();
    if alpha.is_some() {
        cfg.alpha = alpha;
    }
    if delta.is_some() {
        cfg.delta = delta;
    }
    let fleet = s.fleet()?;
    let m = Monitor::from_config(&fleet, &cfg)?;
    let samples = recorded.states.iter().map(|row| m.sample_states(row)).collect::<Result<Vec<_>>>()?;
    let decrease = decrease_test(&recorded.times, &samples, cfg.delta, window)?;
    let report = MonitorReport {
        scenario: s.name.clone(),
        alpha: m.alpha(),
        samples: samples.len(),
        final_w: samples.last().map_or(f64::NAN, |x| x.w),
        final_gamma_dist: samples.last().map_or(f64::NAN, |x| x.gamma_dist),
        decrease,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&report, &dir.join(format!("{}.monitor.json", s.name)))?;
    }
    print_json(&report)?;
    Ok(0)
}
