//! The `grsf-dtr` command-line tool: simulation, fitting, prediction,
//! evaluation and the simulation-study driver, configured by one file.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "grsf-dtr", version, about = "Survival-forest dynamic treatment regimes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate cohorts and write visit/latent CSVs.
    Simulate(Common),
    /// Fit a regime on a visit CSV.
    Fit(Common),
    /// Recommend actions for the visits of a CSV.
    Predict(Common),
    /// Estimate policy values (Monte-Carlo, IPCW, cross-validation).
    Evaluate(Common),
    /// Run the simulation study for a preset end to end.
    ReproduceSim(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML, or JSON with a `.json` extension).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: config, else all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use the full replicate count instead of the desk-scale default.
    #[arg(long)]
    pub full_scale: bool,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate(c) | Command::Fit(c) | Command::Predict(c) | Command::Evaluate(c) | Command::ReproduceSim(c) => c,
        }
    }
}

/// Loads the config, sizes the worker pool and runs the command.
pub fn run(cli: &Cli) -> Result<()> {
    let common = cli.command.common();
    let cfg = config::RunConfig::load(&common.config)?;
    let jobs = common.jobs.or(cfg.jobs);
    if jobs == Some(0) {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    let ctx = commands::Context {
        seed: common.seed.or(cfg.seed),
        out: common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
        full_scale: common.full_scale,
        cfg,
    };
    pool.install(|| match &cli.command {
        Command::Simulate(_) => commands::simulate::run(&ctx),
        Command::Fit(_) => commands::fit::run(&ctx),
        Command::Predict(_) => commands::predict::run(&ctx),
        Command::Evaluate(_) => commands::evaluate::run(&ctx),
        Command::ReproduceSim(_) => commands::reproduce::run(&ctx),
    })
}
