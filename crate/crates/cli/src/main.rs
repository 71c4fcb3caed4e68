//! `rankguide` command-line tool.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "rankguide", version, about = "Tensor-rank signals, routing and steering for reasoning traces")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Error-bounded TT decomposition of a .rgt tensor.
    Decompose(DecomposeArgs),
    /// Per-step window ranks and entropy of a trace, as JSONL.
    Signal(SignalArgs),
    /// Rank-filtered steering vector from a calibration directory.
    SteerExtract(SteerArgs),
    /// Replay SRM/LRM traces through routing and steering.
    Simulate(SimulateArgs),
    /// Comparison table over saved simulation reports.
    Report(ReportArgs),
    /// Synthetic trace from a generator spec.
    Gen(GenArgs),
}

/// Window and tensorization flags shared by several subcommands.
#[derive(Debug, Args)]
pub struct WindowArgs {
    /// Window length W.
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub d1: Option<usize>,
    #[arg(long)]
    pub d2: Option<usize>,
    /// Relative TT error budget.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Also write the result JSON here.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SignalArgs {
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Write JSONL here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SteerArgs {
    /// Directory of calibration trace .jsonl files.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub t_r1: Option<usize>,
    #[arg(long)]
    pub t_r2: Option<usize>,
    /// Validation keywords, one per line.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// SRM trace file, or a directory of them.
    #[arg(long)]
    pub srm: Option<PathBuf>,
    /// LRM trace file, or a directory paired with --srm by file name.
    #[arg(long)]
    pub lrm: Option<PathBuf>,
    /// Entropy threshold; `inf` disables entropy routing.
    #[arg(long)]
    pub t_e: Option<f64>,
    #[arg(long)]
    pub t_r1: Option<usize>,
    #[arg(long)]
    pub t_r2: Option<usize>,
    /// Steering vector JSON.
    #[arg(long)]
    pub steer: Option<PathBuf>,
    /// Ignore any steering vector named in the config file.
    #[arg(long, conflicts_with = "steer")]
    pub no_steer: bool,
    /// Steering strength; defaults to the vector's recorded value.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// full, entropy_only or rank_only.
    #[arg(long)]
    pub mode: Option<String>,
    /// Cost model TOML.
    #[arg(long)]
    pub cost: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Decision log JSONL.
    #[arg(long)]
    pub decisions: Option<PathBuf>,
    /// Run identifier recorded in the report.
    #[arg(long)]
    pub config_id: Option<String>,
    #[arg(long)]
    pub collapse_window: Option<usize>,
    #[arg(long)]
    pub reset_on_route: bool,
    #[arg(long, conflicts_with = "reset_on_route")]
    pub no_reset_on_route: bool,
    /// lrm_if_routed or srm_only.
    #[arg(long)]
    pub accuracy_policy: Option<String>,
    /// Validation keywords, one per line.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Glob matching simulation report JSON files.
    #[arg(long)]
    pub runs: Option<String>,
    /// Config id of the reference run (default: first report).
    #[arg(long)]
    pub baseline: Option<String>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator spec TOML; defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Store hidden states in a .rgt file next to the trace.
    #[arg(long)]
    pub sidecar: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let file = match cli.config.as_deref().map(FileConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    match commands::run(cli.command, &file) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
