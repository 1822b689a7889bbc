//! `nla-recover`: runs the estimator on configured experiments, sweeps and
//! validation suites, and replays earlier runs from their manifests.

mod commands;
mod config;
mod manifest;
mod suites;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::suites::Suite;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    Failed(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failed(_) => 3,
            CliError::Run(_) => 1,
        }
    }
}

impl From<nla_core::Error> for CliError {
    fn from(e: nla_core::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(format!("json: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Run(format!("csv: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "nla-recover", version, about = "Noise-level-aware function recovery from gridded samples")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; overrides `sweep.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "NLA_THREADS")]
    threads: Option<usize>,
    /// Row format for sweep output; overrides `output.format`.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Estimate from observations (a JSON observation set, or the configured target).
    Estimate {
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Risk against the number of samples at the first configured sigma.
    SweepM,
    /// Risk against sigma^2/m at the first configured grid level.
    SweepSigma,
    /// Run a bundled validation suite.
    Validate {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Build and certify a packing family on the configured problem.
    Pack {
        /// Cells per axis.
        #[arg(long, default_value_t = 16)]
        n_cells: usize,
    },
    /// Build fooling pairs for each grid level (default: `sweep.n_list`).
    Fooling {
        #[arg(long)]
        n: Option<u32>,
    },
    /// Scaled best-approximation profile of the configured target.
    BesovEstimate {
        #[arg(long, default_value_t = 8)]
        k_max: u32,
    },
    /// Re-run a manifest and compare its deterministic digest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Estimate { .. } => "estimate",
            Command::SweepM => "sweep-m",
            Command::SweepSigma => "sweep-sigma",
            Command::Validate { .. } => "validate",
            Command::Pack { .. } => "pack",
            Command::Fooling { .. } => "fooling",
            Command::BesovEstimate { .. } => "besov-estimate",
            Command::Replay { .. } => "replay",
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Run(e.to_string()))?;
    }
    if let Command::Replay { manifest } = &cli.command {
        return commands::replay(manifest, cli.out.as_deref());
    }
    let mut config = cli.config.as_deref().map(config::ExperimentConfig::load).transpose()?;
    if let Some(cfg) = config.as_mut() {
        if let Some(seed) = cli.seed {
            cfg.sweep.seed = seed;
        }
        if let Some(out) = &cli.out {
            cfg.output.directory = out.clone();
        }
        if let Some(format) = cli.format {
            cfg.output.format = format;
        }
    }
    let ctx = commands::Context {
        seed: cli.seed.or(config.as_ref().map(|c| c.sweep.seed)).unwrap_or(0),
        out: cli.out.or(config.as_ref().map(|c| c.output.directory.clone())),
        format: cli.format.or(config.as_ref().map(|c| c.output.format)).unwrap_or_default(),
        config,
    };
    commands::execute(&ctx, &cli.command).map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
