//! The `delayscale` command line: synthesize, simulate, check and monitor,
//! each driven by one JSON run configuration.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::{write_json, GainsSource, RunConfig};
use crate::controller::{Controller, Feedback};
use crate::error::Error;
use crate::gains::{verify_coupled_lyapunov, CouplingReport, GainSet};
use crate::model::{check_assumptions, AssumptionReport, BoundEnvelope, PlantModel};
use crate::monitor::{convergence_metrics, ConvergenceMetrics, Monitor, MonitorVerdict};
use crate::sim::{read_csv, simulate, write_csv, RunStats, RunStatus, SimEvent, TrajectoryRow};

/// Process exit codes; stable across platforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    Ok = 0,
    Config = 1,
    Synthesis = 2,
    BlowUp = 3,
    Verification = 4,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Parser)]
#[command(name = "delayscale", version, about = "Dual dynamic high-gain scaling controller toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize (or verify configured) gains and write the gains artifact.
    Synthesize(Common),
    /// Simulate the closed loop; writes the trajectory CSV and a summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// `path:start:stop:count` over a dotted config path, e.g. `sim.x0.0:0.1:0.5:5`.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Sample the plant assumptions and verify a referenced trajectory.
    Check(Common),
    /// Evaluate the Lyapunov certificate along a trajectory.
    Monitor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Gains artifact; overrides the config's gains source.
        #[arg(long)]
        gains: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// A failure together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

fn fail(exit: Exit) -> impl Fn(Error) -> Failure {
    move |e| Failure { exit, message: e.to_string() }
}

fn config_err(e: Error) -> Failure {
    fail(Exit::Config)(e)
}

fn io_err(e: std::io::Error) -> Failure {
    Failure { exit: Exit::Config, message: e.to_string() }
}

type CliResult = std::result::Result<Exit, Failure>;

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Config.code() } else { Exit::Ok.code() };
        }
    };
    let outcome = match cli.command {
        Command::Synthesize(c) => with_config(&c, cmd_synthesize),
        Command::Simulate { common, sweep: None } => with_config(&common, cmd_simulate),
        Command::Simulate { common, sweep: Some(spec) } => cmd_sweep(&common, &spec),
        Command::Check(c) => with_config(&c, cmd_check),
        Command::Monitor { common, trajectory, gains } => {
            with_config(&common, |cfg, out| cmd_monitor(cfg, out, trajectory.as_deref(), gains.as_deref()))
        }
    };
    match outcome {
        Ok(exit) => exit.code(),
        Err(f) => {
            eprintln!("delayscale: {}", f.message);
            f.exit.code()
        }
    }
}

fn with_config(c: &Common, f: impl FnOnce(&RunConfig, &Path) -> CliResult) -> CliResult {
    let cfg = RunConfig::load(&c.config).map_err(config_err)?;
    std::fs::create_dir_all(&c.out).map_err(io_err)?;
    f(&cfg, &c.out)
}

fn plant(cfg: &RunConfig) -> std::result::Result<(PlantModel, BoundEnvelope), Failure> {
    cfg.plant().map_err(config_err)
}

fn gains(cfg: &RunConfig, env: &BoundEnvelope, n: usize) -> std::result::Result<GainSet, Failure> {
    cfg.gains(env, n).map_err(|e| match e {
        Error::SynthesisFailure { .. } => fail(Exit::Synthesis)(e),
        other => config_err(other),
    })
}

fn controller(cfg: &RunConfig, model: &PlantModel, env: &BoundEnvelope, g: GainSet) -> std::result::Result<Controller, Failure> {
    cfg.controller(model, env, g).map_err(config_err)
}

fn certificate(cfg: &RunConfig, model: &PlantModel, g: &GainSet) -> std::result::Result<CouplingReport, Failure> {
    let m = &cfg.monitor;
    verify_coupled_lyapunov(g, model.dynamics.as_ref(), m.certificate_range, m.certificate_grid).map_err(config_err)
}

#[derive(Serialize)]
struct SynthesisSummary<'a> {
    certified: bool,
    certificate: &'a CouplingReport,
}

fn cmd_synthesize(cfg: &RunConfig, out: &Path) -> CliResult {
    let (model, env) = plant(cfg)?;
    let g = gains(cfg, &env, model.n())?;
    let cert = certificate(cfg, &model, &g)?;
    let certified = cert.passed();
    write_json(&out.join("certificate.json"), &SynthesisSummary { certified, certificate: &cert }).map_err(config_err)?;
    if !certified {
        return Err(Failure {
            exit: Exit::Synthesis,
            message: format!("gains not certified; margins {:?}", cert.margins()),
        });
    }
    write_json(&out.join(&cfg.outputs.gains), &g).map_err(config_err)?;
    println!("certified; margins {:?}", cert.margins());
    Ok(Exit::Ok)
}

#[derive(Serialize)]
struct SimulationSummary {
    status: RunStatus,
    events: Vec<SimEvent>,
    stats: RunStats,
    metrics: ConvergenceMetrics,
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> CliResult {
    let (model, env) = plant(cfg)?;
    let g = gains(cfg, &env, model.n())?;
    let c = controller(cfg, &model, &env, g)?;
    let flipped = c.with_flipped_u_tilde();
    let feedback: &dyn Feedback = if cfg.feedback.flip_u_tilde { &flipped } else { &c };
    let result = simulate(&model, feedback, &cfg.sim).map_err(config_err)?;
    let file = File::create(out.join(&cfg.outputs.trajectory)).map_err(io_err)?;
    write_csv(BufWriter::new(file), result.n, result.n_psi, &result.rows).map_err(config_err)?;
    let summary = SimulationSummary {
        metrics: convergence_metrics(&result),
        status: result.status.clone(),
        events: result.events.clone(),
        stats: result.stats.clone(),
    };
    write_json(&out.join(&cfg.outputs.summary), &summary).map_err(config_err)?;
    match &result.status {
        RunStatus::Completed => {
            println!("completed {} rows", result.rows.len());
            Ok(Exit::Ok)
        }
        other => Err(Failure { exit: Exit::BlowUp, message: format!("run halted: {other:?}") }),
    }
}

/// A parsed `--sweep` specification.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub path: Vec<String>,
    pub values: Vec<f64>,
}

pub fn parse_sweep(spec: &str) -> std::result::Result<SweepSpec, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [path, start, stop, count] = parts[..] else {
        return Err(format!("sweep `{spec}` is not path:start:stop:count"));
    };
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("sweep bound `{s}`: {e}"));
    let (a, b) = (num(start)?, num(stop)?);
    let k: usize = count.parse().map_err(|e| format!("sweep count `{count}`: {e}"))?;
    if k == 0 || path.is_empty() || !a.is_finite() || !b.is_finite() {
        return Err(format!("sweep `{spec}` needs a path, finite bounds and count >= 1"));
    }
    let values = if k == 1 { vec![a] } else { (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect() };
    Ok(SweepSpec { path: path.split('.').map(str::to_string).collect(), values })
}

fn set_path(root: &mut Value, path: &[String], v: f64) -> std::result::Result<(), String> {
    let mut cur = root;
    for key in path {
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(map) => map.entry(key.clone()).or_insert(Value::Null),
            Value::Array(items) => {
                let i: usize = key.parse().map_err(|_| format!("`{key}` is not an array index"))?;
                items.get_mut(i).ok_or_else(|| format!("index {i} out of range"))?
            }
            _ => return Err(format!("cannot descend into `{key}`")),
        };
    }
    *cur = serde_json::json!(v);
    Ok(())
}

/// Thread cap for sweeps from `DELAYSCALE_THREADS`; 0 or unset means rayon's default.
fn sweep_threads() -> usize {
    std::env::var("DELAYSCALE_THREADS").ok().and_then(|v| v.parse().ok()).unwrap_or(0)
}

#[derive(Serialize)]
struct SweepEntry {
    value: f64,
    dir: String,
    exit: Exit,
    message: Option<String>,
}

fn cmd_sweep(common: &Common, spec: &str) -> CliResult {
    let sweep = parse_sweep(spec).map_err(|m| Failure { exit: Exit::Config, message: m })?;
    let text = std::fs::read_to_string(&common.config).map_err(io_err)?;
    let base: Value = serde_json::from_str(&text).map_err(|e| config_err(e.into()))?;
    // Validate the unswept config first so errors surface once.
    let template = RunConfig::load(&common.config).map_err(config_err)?;
    std::fs::create_dir_all(&common.out).map_err(io_err)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep_threads())
        .build()
        .map_err(|e| Failure { exit: Exit::Config, message: e.to_string() })?;
    let entries: Vec<SweepEntry> = pool.install(|| {
        sweep
            .values
            .par_iter()
            .enumerate()
            .map(|(k, &value)| {
                let dir = format!("sweep_{k:03}");
                let outcome = (|| {
                    let mut doc = base.clone();
                    set_path(&mut doc, &sweep.path, value).map_err(|m| Failure { exit: Exit::Config, message: m })?;
                    let mut cfg = RunConfig::from_json(&doc.to_string()).map_err(config_err)?;
                    cfg.base_dir = template.base_dir.clone();
                    let out = common.out.join(&dir);
                    std::fs::create_dir_all(&out).map_err(io_err)?;
                    cmd_simulate(&cfg, &out)
                })();
                let (exit, message) = match outcome {
                    Ok(e) => (e, None),
                    Err(f) => (f.exit, Some(f.message)),
                };
                SweepEntry { value, dir, exit, message }
            })
            .collect()
    });
    write_json(&common.out.join("sweep.json"), &entries).map_err(config_err)?;
    let worst = entries.iter().map(|e| e.exit).max().unwrap_or(Exit::Ok);
    println!("sweep of {} runs; worst exit {}", entries.len(), worst.code());
    Ok(worst)
}

#[derive(Serialize)]
struct CheckVerdict {
    assumptions: AssumptionReport,
    lyapunov: Option<MonitorVerdict>,
    passed: bool,
}

fn read_trajectory(path: &Path) -> std::result::Result<Vec<TrajectoryRow>, Failure> {
    let file = File::open(path).map_err(io_err)?;
    let (_, _, rows) = read_csv(file).map_err(config_err)?;
    Ok(rows)
}

fn lyapunov_verdict(
    cfg: &RunConfig,
    model: &PlantModel,
    c: &Controller,
    rows: &[TrajectoryRow],
) -> std::result::Result<MonitorVerdict, Failure> {
    let spacing = cfg.sim.h * cfg.sim.decimation as f64;
    if let [a, b, ..] = rows {
        if ((b.t - a.t) - spacing).abs() > 1e-9 * spacing.max(1.0) {
            return Err(Failure {
                exit: Exit::Config,
                message: format!("trajectory spacing {} differs from the configured {spacing}", b.t - a.t),
            });
        }
    }
    let completed = rows.last().is_some_and(|r| r.t >= cfg.sim.horizon - 0.5 * cfg.sim.h);
    let monitor = Monitor::new(c, model).map_err(config_err)?;
    monitor.evaluate(rows, spacing, cfg.monitor.tol, completed).map_err(fail(Exit::Verification))
}

fn cmd_check(cfg: &RunConfig, out: &Path) -> CliResult {
    let (model, env) = plant(cfg)?;
    let assumptions = check_assumptions(&model, &env, &cfg.sampler).map_err(config_err)?;
    let lyapunov = match &cfg.monitor.trajectory {
        Some(p) => {
            let rows = read_trajectory(&cfg.resolve(p))?;
            let g = gains(cfg, &env, model.n())?;
            let c = controller(cfg, &model, &env, g)?;
            Some(lyapunov_verdict(cfg, &model, &c, &rows)?)
        }
        None => None,
    };
    let passed = assumptions.passed && lyapunov.as_ref().is_none_or(|v| v.passed);
    for m in &assumptions.margins {
        println!("{:<4} margin {:+.3e} {}", m.id, m.margin, if m.passed { "pass" } else { "FAIL" });
    }
    write_json(&out.join(&cfg.outputs.verdict), &CheckVerdict { assumptions, lyapunov, passed }).map_err(config_err)?;
    Ok(if passed { Exit::Ok } else { Exit::Verification })
}

fn cmd_monitor(cfg: &RunConfig, out: &Path, trajectory: Option<&Path>, gains_path: Option<&Path>) -> CliResult {
    let (model, env) = plant(cfg)?;
    let traj = match (trajectory, &cfg.monitor.trajectory) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => cfg.resolve(p),
        (None, None) => out.join(&cfg.outputs.trajectory),
    };
    let rows = read_trajectory(&traj)?;
    let g = match gains_path {
        Some(p) => {
            let mut with_path = cfg.clone();
            with_path.gains = GainsSource::Path(p.to_path_buf());
            gains(&with_path, &env, model.n())?
        }
        None => gains(cfg, &env, model.n())?,
    };
    let c = controller(cfg, &model, &env, g)?;
    let verdict = lyapunov_verdict(cfg, &model, &c, &rows)?;
    println!(
        "decrease {} ({} violations), converged {}, monotone {}",
        if verdict.decrease.passed { "pass" } else { "FAIL" },
        verdict.decrease.violations.len(),
        verdict.converged,
        verdict.monotone
    );
    write_json(&out.join(&cfg.outputs.verdict), &verdict).map_err(config_err)?;
    Ok(if verdict.passed { Exit::Ok } else { Exit::Verification })
}
