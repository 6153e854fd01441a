//! Experiment runner for ROME encoders: probe a reservoir, build the optimal
//! encoder, and evaluate it against random baselines.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "rome", version, about = "Optimal input encoders for physical reservoirs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Run a single seed instead of `run.seeds`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Use the closed-form probe when the model is linear.
    #[arg(long, global = true)]
    pub analytic: bool,

    /// Probe artifact to read or write instead of `<out>/probe.json`.
    #[arg(long, global = true)]
    pub probe: Option<PathBuf>,

    /// Encoder file to read or write instead of `<out>/encoder.json`.
    #[arg(long, global = true)]
    pub encoder: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Measure fluctuations and linear response; writes probe.json.
    Probe,
    /// Build the optimal encoder; writes encoder.json and spectrum.csv.
    Optimize,
    /// Score the configured encoder; writes metrics.csv.
    Evaluate,
    /// Sweep input power, or scan the task/ROME plane with `--plane`.
    Sweep {
        #[arg(long)]
        plane: bool,
    },
    /// Projected gradient ascent against the ROME reference; writes ascent.csv.
    Ascent,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Probe => "probe",
            Command::Optimize => "optimize",
            Command::Evaluate => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::Ascent => "ascent",
        }
    }
}

/// Resolve the config and flags into a [`commands::Context`].
pub fn context(cli: &Cli) -> Result<commands::Context, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::config("--config <path> is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.run.seeds = vec![s];
    }
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    cfg.validate()?;
    let mut flags: BTreeMap<String, Value> = BTreeMap::new();
    flags.insert("config".into(), json!(path.display().to_string()));
    if let Some(s) = cli.seed {
        flags.insert("seed".into(), json!(s));
    }
    if cli.analytic {
        flags.insert("analytic".into(), json!(true));
    }
    if let Command::Sweep { plane: true } = cli.command {
        flags.insert("plane".into(), json!(true));
    }
    Ok(commands::Context {
        out: cfg.output.dir.clone(),
        cfg,
        probe_path: cli.probe.clone(),
        encoder_path: cli.encoder.clone(),
        analytic: cli.analytic,
        flags,
    })
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = context(cli)?;
    let work = || -> Result<(), CliError> {
        match cli.command {
            Command::Probe => commands::cmd_probe(&ctx).map(drop),
            Command::Optimize => commands::cmd_optimize(&ctx).map(drop),
            Command::Evaluate => commands::cmd_evaluate(&ctx).map(drop),
            Command::Sweep { plane } => commands::cmd_sweep(&ctx, plane).map(drop),
            Command::Ascent => commands::cmd_ascent(&ctx).map(drop),
        }
    };
    match cli.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::config(format!("cannot start {n} worker threads: {e}")))?
            .install(work),
        None => work(),
    }
}
