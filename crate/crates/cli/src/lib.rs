//! `blendlab` command line: batch runs, check suites and the live service.
//!
//! Exit codes: 0 success, 1 configuration or runtime error, 2 when a run
//! finished but some arbitration step was infeasible.

pub mod check;
pub mod run;
pub mod serve;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "blendlab",
    version,
    about = "Probabilistic shared control for assistive crowd navigation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes for every method × seed and write logs and metrics.
    Run(RunArgs),
    /// Run a check suite and print pass/fail per criterion.
    Check(CheckArgs),
    /// Serve live sessions over WebSocket at `/session`.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Built-in scenario name or path to a scenario JSON file.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Comma-separated methods, e.g. `ltb,psc`.
    #[arg(long = "method")]
    pub methods: Option<String>,
    /// Seeds: `0..19` (inclusive), `3`, or a comma list such as `0,4,7..9`.
    #[arg(long, env = "BLENDLAB_SEED")]
    pub seeds: Option<String>,
    /// Output directory for `metrics.csv` and `episodes/`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Agreeability bandwidth γ.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Fixed operator gain for the blending methods.
    #[arg(long = "kh")]
    pub k_h: Option<f64>,
    /// Operator samples drawn by CTB.
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Candidate trajectories scored by the PSC search.
    #[arg(long = "budget")]
    pub search_budget: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// One of gaussian, t1, t2, t3, fig3, lemma1, normalizer, corridor, or all.
    pub suite: String,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// TCP port; 0 picks a free one.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Built-in scenario name or path to a scenario JSON file.
    #[arg(long, default_value = "open")]
    pub scenario: String,
    #[arg(long, default_value = "psc")]
    pub method: String,
    /// Simulation tick period in milliseconds.
    #[arg(long, default_value_t = 50)]
    pub tick_ms: u64,
    #[arg(long, env = "BLENDLAB_SEED", default_value_t = 0)]
    pub seed: u64,
}

/// A failure that maps to a process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Runs a parsed command line and returns the exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(args) => run::cmd_run(&args),
        Command::Check(args) => check::cmd_check(&args.suite),
        Command::Serve(args) => serve::cmd_serve(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
