//! `sculpt` — reproducible runs of the sparsity-law validator, the toy
//! continual-learning benchmark, parameter sweeps, and run reports.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

pub mod commands;
pub mod config;

use lorasculpt::SculptError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser)]
#[command(
    name = "sculpt",
    version,
    about = "Sparse low-rank adapter training, sparsity-law validation, sweeps, and reports"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Monte Carlo validation of the product-sparsity laws.
    Theory(TheoryArgs),
    /// Pretrain on the source mixture, fine-tune on the target task.
    Train(TrainArgs),
    /// Grid one parameter across values and seeds.
    Sweep(SweepArgs),
    /// Summarize a finished run directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Independent entry placement (the proofs' model).
    Bernoulli,
    /// Exactly round(s*n) occupied entries (what pruning produces).
    Topk,
    /// Per-row/per-column densities around the stated averages.
    Hetero,
}

#[derive(Args)]
pub struct TheoryArgs {
    /// Rows of the left factor's product (B is p x r).
    #[arg(long)]
    pub p: usize,
    /// Columns of the right factor's product (A is r x q).
    #[arg(long)]
    pub q: usize,
    /// Shared rank.
    #[arg(long)]
    pub r: usize,
    /// Retained density of A.
    #[arg(long = "s-a")]
    pub s_a: f64,
    /// Retained density of B.
    #[arg(long = "s-b")]
    pub s_b: f64,
    #[arg(long)]
    pub trials: usize,
    /// Deviation threshold for the concentration check.
    #[arg(long, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory (theory.csv is written here).
    #[arg(long)]
    pub out: PathBuf,
    /// Acceptance window around the expected sparsity.
    #[arg(long, default_value_t = 0.01)]
    pub window: f64,
    /// Half-width of the heterogeneous density band (default: half the
    /// average density).
    #[arg(long = "hetero-width")]
    pub hetero_width: Option<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Run configuration (key = value lines; see --dump-config).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for run artifacts.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Reuse a cached pretrained base (base.txt from an earlier run).
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Write the default configuration to this path and exit.
    #[arg(long = "dump-config")]
    pub dump_config: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Base run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Parameter to sweep: s | alpha | omega | beta.
    #[arg(long)]
    pub param: String,
    /// Comma-separated parameter values.
    #[arg(long)]
    pub values: String,
    /// Seeds per value (config seed, config seed + 1, ...).
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Output directory (sweep.csv is written here).
    #[arg(long)]
    pub out: PathBuf,
    /// Concurrent grid workers.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Directory of a finished training run.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Where to write report.csv and summary.txt (default: the run dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code_for(err: &SculptError) -> i32 {
    match err {
        SculptError::Training { .. } => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses arguments, dispatches, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Theory(args) => commands::run_theory(args),
        Command::Train(args) => commands::run_train(args),
        Command::Sweep(args) => commands::run_sweep(args),
        Command::Report(args) => commands::run_report(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}
