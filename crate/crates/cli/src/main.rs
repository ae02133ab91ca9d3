//! `falconry`: run scenarios headlessly, replay recorded users, audit traces.
//!
//! Exit status: 0 when the run is clean, 1 when the safety audit finds
//! setpoints inside the safety radius, 2 on any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use falconry_core::scenario::{DroneStart, TraceUser};
use falconry_core::*;

#[derive(Parser)]
#[command(name = "falconry", version, about = "Palm-landing drone simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in or file scenario.
    Run {
        /// Built-in name or path to a scenario JSON file.
        #[arg(default_value = "approach_static")]
        scenario: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Drive the simulation with a recorded user trace CSV.
    Replay {
        trace: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Recompute the report for an existing run trace CSV.
    Audit {
        trace: PathBuf,
        /// Run configuration the trace was produced with.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write report.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect the built-in scenarios.
    Scenarios {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    List,
}

#[derive(Args)]
struct RunOpts {
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for trace.csv and report.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Tracking mode, ideal or dynamic; overrides the config.
    #[arg(long)]
    mode: Option<SimMode>,
    /// Seed for scenario jitter; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds, replacing the scenario duration.
    #[arg(long)]
    duration_override: Option<f64>,
}

impl RunOpts {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.duration_override.is_some() {
            cfg.duration = self.duration_override;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn mode_name(mode: SimMode) -> &'static str {
    match mode {
        SimMode::Ideal => "ideal",
        SimMode::Dynamic => "dynamic",
    }
}

fn write_outputs(dir: &Path, trace: Option<&RunTrace>, report: &MetricsReport) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if let Some(trace) = trace {
        trace.save(&dir.join("trace.csv"))?;
    }
    let json = serde_json::to_string_pretty(report)?;
    let path = dir.join("report.json");
    std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn summarize(report: &MetricsReport) {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    println!(
        "{} [{}]: landed {} at {} s, rmse {} m, delay {} s, min chest {} m, violations {}",
        report.scenario,
        report.mode,
        report.landing.success,
        fmt(report.landing.time),
        fmt(report.rmse),
        fmt(report.delay),
        fmt(report.min_chest_drone),
        report.safety.violations
    );
}

fn status(report: &MetricsReport) -> ExitCode {
    if report.safety.violations == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(scenario: &str, opts: &RunOpts) -> Result<ExitCode> {
    let cfg = opts.config()?;
    let scenario = Scenario::resolve(scenario)?;
    let (out, report) = run_scenario(&cfg, &scenario)?;
    write_outputs(&opts.out, Some(&out.trace), &report)?;
    summarize(&report);
    Ok(status(&report))
}

fn replay(path: &Path, opts: &RunOpts) -> Result<ExitCode> {
    let cfg = opts.config()?;
    let trace = UserTrace::load(path)?;
    let start = match cfg.drone_start {
        Some(s) => s,
        None => {
            // Two metres in front of where the recorded user starts.
            let (chest, _) = trace.poses_at(trace.start()).context("empty user trace")?;
            let p = chest.position;
            let (s, c) = chest.yaw().sin_cos();
            DroneStart {
                position: [p.x + 2.0 * c, p.y + 2.0 * s, 0.0],
                yaw: chest.yaw() + std::f64::consts::PI,
            }
        }
    };
    let source = TraceUser { trace, body: cfg.body };
    let out = Simulation::new(cfg, source, start)?.run()?;
    let mut report = MetricsReport::compute(&out.trace, &cfg.planner)?;
    report.scenario = path
        .file_stem()
        .map_or("replay".into(), |s| s.to_string_lossy().into_owned());
    report.mode = mode_name(cfg.mode).into();
    report.seed = None;
    write_outputs(&opts.out, Some(&out.trace), &report)?;
    summarize(&report);
    Ok(status(&report))
}

fn audit(path: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let trace = RunTrace::load(path)?;
    if trace.samples.is_empty() {
        bail!("{} has no samples", path.display());
    }
    let mut report = MetricsReport::compute(&trace, &cfg.planner)?;
    report.scenario = path
        .file_stem()
        .map_or("trace".into(), |s| s.to_string_lossy().into_owned());
    report.mode = "recorded".into();
    report.seed = None;
    if let Some(dir) = out {
        write_outputs(dir, None, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(status(&report))
}

fn list_scenarios() -> Result<ExitCode> {
    for name in Scenario::builtin_names() {
        let s = Scenario::builtin(name)?;
        println!("{name:<16} {:>5.1} s  {}", s.duration, s.description);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, opts } => run(scenario, opts),
        Command::Replay { trace, opts } => replay(trace, opts),
        Command::Audit { trace, config, out } => audit(trace, config.as_deref(), out.as_deref()),
        Command::Scenarios {
            action: ScenarioAction::List,
        } => list_scenarios(),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
