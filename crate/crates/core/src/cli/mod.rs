//! Command-line front end: `solve`, `mc`, `sets` and `validate`.
//!
//! Each stage writes its tables and a manifest into the output directory.
//! Downstream stages check the upstream manifests against the current config
//! before reading anything.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use commands::{cmd_mc, cmd_sets, cmd_solve, cmd_validate};
pub use config::{Resolved, RunConfig};

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_MISSING: i32 = 4;
pub const EXIT_STALE: i32 = 5;

pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: msg.into() }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERIC, message: msg.into() }
    }

    pub fn missing(msg: impl Into<String>) -> Self {
        Self { code: EXIT_MISSING, message: msg.into() }
    }

    pub fn stale(msg: impl Into<String>) -> Self {
        Self { code: EXIT_STALE, message: msg.into() }
    }

    pub fn failed(msg: impl Into<String>) -> Self {
        Self { code: EXIT_CHECK_FAILED, message: msg.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: EXIT_CHECK_FAILED, message: format!("{}: {e}", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(name = "cvar-reach", version, about = "Risk-sensitive safe sets for the retention pond benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; the built-in pond defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; falls back to `output_dir` in the config, then `out`.
    #[arg(long, global = true, env = "CVAR_REACH_OUT")]
    pub out: Option<PathBuf>,
    /// Overrides `mc.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Reduced sample count and a coarse state grid.
    #[arg(long, global = true)]
    pub quick: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Value iteration on the augmented grid.
    Solve,
    /// Monte Carlo estimates of W0 and J0* on the sets lattice.
    Mc,
    /// Safe-set extraction with inclusion, nesting and exit-bound checks.
    Sets,
    /// Run every property suite and print the pass/fail matrix.
    Validate,
}

/// The config after `--seed` and `--quick` are applied.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::pond_v1(),
    };
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    if cli.quick {
        cfg = cfg.quick()?;
    }
    Ok(cfg)
}

pub fn output_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    let out = output_dir(cli, &cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Solve => cmd_solve(&cfg, &out).map(|_| ()),
        Command::Mc => cmd_mc(&cfg, &out).map(|_| ()),
        Command::Sets => match cmd_sets(&cfg, &out)? {
            r if r.pass => Ok(()),
            _ => Err(CliError::failed("safe-set checks failed; see sets_report.json")),
        },
        Command::Validate => {
            let failed: Vec<_> = cmd_validate(&cfg, cli.quick)?
                .into_iter()
                .filter(|r| !r.pass)
                .map(|r| r.name)
                .collect();
            match failed.is_empty() {
                true => Ok(()),
                false => Err(CliError::failed(format!("failed suites: {}", failed.join(", ")))),
            }
        }
    })
}
