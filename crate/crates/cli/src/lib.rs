//! Command-line driver: reads a TOML run configuration, dispatches to a
//! subcommand, writes artifacts plus a checksummed manifest into the run
//! directory and prints a one-line JSON summary.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure,
//! 4 non-convergence.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

pub mod config;
mod commands;
mod output;

use config::{MertonVariant, RunConfig};
use output::Artifacts;

/// Environment override of `output.directory`.
pub const ENV_OUTPUT_DIR: &str = "REGIME_OUTPUT_DIR";
/// Environment override of `workers`.
pub const ENV_WORKERS: &str = "REGIME_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] regime_core::Error),
    #[error("cannot {action} {}: {source}", path.display())]
    Io {
        action: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Csv(_) | CliError::Json(_) => "output",
            CliError::Usage(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" | "syntax" | "eval" | "domain" | "geometry_invalid" | "resolution" | "usage" => 2,
            "non_convergence" => 4,
            _ => 3,
        }
    }

    fn to_json(&self) -> Value {
        let mut v = json!({
            "kind": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::Core(e) = self {
            match e {
                regime_core::Error::Syntax { offset, .. } => v["offset"] = json!(offset),
                regime_core::Error::NonConvergence { iterations, history, .. } => {
                    v["iterations"] = json!(iterations);
                    v["history"] = json!(history);
                }
                _ => {}
            }
        }
        json!({ "error": v })
    }
}

#[derive(Debug, Parser)]
#[command(name = "regime", version, about = "Time-inconsistent control of regime-switching diffusions")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Run directory (overrides the config and REGIME_OUTPUT_DIR)
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads (overrides the config and REGIME_WORKERS)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Validate the config and print the plan without computing
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Tc,
    Pre,
    Eq,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate paths of the controlled switching diffusion
    Simulate,
    /// Compare empirical transition rates with quadrature
    Rates,
    /// Solve the N-player partition game and study refinement
    PartitionSolve,
    /// Solve the equilibrium HJB system
    Equilibrium,
    /// Closed-form Merton reference: time-consistent, pre-committed or equilibrium
    Merton {
        #[arg(value_enum)]
        variant: Option<VariantArg>,
    },
    /// Spike-perturbation check of approximate local optimality
    Verify,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Rates => "rates",
            Command::PartitionSolve => "partition-solve",
            Command::Equilibrium => "equilibrium",
            Command::Merton { .. } => "merton",
            Command::Verify => "verify",
        }
    }

    fn plan(&self, cfg: &RunConfig) -> Vec<String> {
        let g = &cfg.grid;
        let grid = format!("{} x {} nodes on [0, {}]", g.n_t + 1, g.n_x, g.horizon);
        match self {
            Command::Simulate => vec![
                format!("simulate {} paths with step {}", cfg.simulate.paths, cfg.simulate.step),
                format!("record {} full paths", cfg.simulate.record.min(cfg.simulate.paths)),
            ],
            Command::Rates => vec![format!(
                "estimate rates at x = {:?} with ds = {} over {} paths",
                cfg.rates.points, cfg.rates.ds, cfg.rates.paths
            )],
            Command::PartitionSolve => vec![
                format!("grid {grid}"),
                match &cfg.solver.knots {
                    Some(k) => format!("partition with knots {k:?}"),
                    None => format!("uniform partitions {:?}", cfg.solver.partitions),
                },
                "reference two-time field for the distance".into(),
            ],
            Command::Equilibrium => vec![
                format!("grid {grid}"),
                format!("sweeps up to {} at tol {}", cfg.solver.max_sweeps, cfg.solver.tol),
            ],
            Command::Merton { .. } => vec![
                format!("phi ODE with at least {} steps", cfg.merton.phi_steps),
                format!("PDE cross-check on {grid}"),
                format!("Monte Carlo paths: {}", cfg.merton.paths),
            ],
            Command::Verify => vec![
                format!("equilibrium on {grid}"),
                format!(
                    "spike gains at t = {} for eps fractions {:?}",
                    cfg.solver.spike_time, cfg.solver.epsilon_ladder
                ),
            ],
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                action: "read",
                path: path.clone(),
                source,
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
        cfg.output.directory = dir;
    }
    if let Ok(w) = std::env::var(ENV_WORKERS) {
        cfg.workers = w
            .parse()
            .map_err(|_| CliError::Usage(format!("{ENV_WORKERS} must be a non-negative integer, got `{w}`")))?;
    }
    if let Some(dir) = &cli.output {
        cfg.output.directory = dir.display().to_string();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: &Cli, cfg: &RunConfig) -> Result<Value, CliError> {
    let name = cli.command.name();
    if cli.dry_run {
        cfg.validate()?;
        return Ok(json!({
            "command": name,
            "status": "dry_run",
            "output_dir": cfg.output.directory,
            "seed": cfg.seed,
            "plan": cli.command.plan(cfg),
        }));
    }
    let scenario = cfg.build()?;
    let mut out = Artifacts::new(Path::new(&cfg.output.directory));
    out.write("config.toml", cfg.to_toml().as_bytes())?;
    let summary = match &cli.command {
        Command::Simulate => commands::simulate(cfg, &scenario, &mut out)?,
        Command::Rates => commands::rates(cfg, &scenario, &mut out)?,
        Command::PartitionSolve => commands::partition_solve(cfg, &scenario, &mut out)?,
        Command::Equilibrium => commands::equilibrium(cfg, &scenario, &mut out)?,
        Command::Merton { variant } => {
            let v = match variant {
                Some(VariantArg::Tc) => MertonVariant::Tc,
                Some(VariantArg::Pre) => MertonVariant::Pre,
                Some(VariantArg::Eq) => MertonVariant::Eq,
                None => cfg.merton.variant,
            };
            commands::merton(cfg, &scenario, &mut out, v)?
        }
        Command::Verify => commands::verify(cfg, &scenario, &mut out)?,
    };
    let dir = out.dir().display().to_string();
    let artifacts = out.finish(name, cfg.seed)?;
    Ok(json!({
        "command": name,
        "status": "ok",
        "output_dir": dir,
        "artifacts": artifacts,
        "result": summary,
    }))
}

/// Parses `args`, runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    let result = load(&cli).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", cfg.workers)))?;
        pool.install(|| execute(&cli, &cfg))
    });
    match result {
        Ok(summary) => {
            let _ = writeln!(stdout, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.to_json());
            e.exit_code()
        }
    }
}
