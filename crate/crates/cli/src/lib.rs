//! `wpnode`: generate | train | evaluate | compare | sweep.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure.

mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use wpnode::dynamics::Solver;

use config::Overrides;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "wpnode", version, about = "Weak-form + rollout neural ODEs for chaotic systems")]
pub struct Cli {
    /// -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a system and write clean, noisy and reference trajectories.
    Generate(GenerateArgs),
    /// Train a model on generated data.
    Train(TrainArgs),
    /// Score a checkpoint (or the analytic field) against reference data.
    Evaluate(EvaluateArgs),
    /// Tabulate evaluated runs.
    Compare(CompareArgs),
    /// Vary one hyperparameter and train/evaluate each value.
    Sweep(SweepArgs),
}

#[derive(clap::Args, Debug)]
pub struct GenerateArgs {
    /// l63, l96 or ks.
    #[arg(long)]
    system: String,
    /// Training signal length in time units; system default when absent.
    #[arg(long)]
    duration: Option<f64>,
    /// Clean continuation after the training signal, in time units.
    #[arg(long)]
    reference_duration: Option<f64>,
    /// Noise standard deviation relative to the per-dimension RMS.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    preset: Option<String>,
    /// JSON file; fields overlay the preset, flags overlay the file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(clap::Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Evaluate the analytic right-hand side instead of a checkpoint.
    #[arg(long, requires = "system")]
    oracle: bool,
    /// System of the reference data; read from the checkpoint when absent.
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    data: PathBuf,
    /// Defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "dopri5")]
    solver: Solver,
    #[arg(long)]
    n_starts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Forecast horizon in Lyapunov times.
    #[arg(long)]
    horizon: Option<f64>,
    /// VPT threshold; system default when absent.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = wpnode::evaluation::DEFAULT_BINS)]
    bins: usize,
    /// Free-run length per start for the invariant measure, in time units.
    #[arg(long)]
    kl_duration: Option<f64>,
    /// Also integrate one long free run under several solvers.
    #[arg(long)]
    solver_sweep: bool,
    #[arg(long)]
    sweep_duration: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "euler,midpoint,rk4,bosh3,dopri5")]
    sweep_solvers: Vec<Solver>,
}

#[derive(clap::Args, Debug)]
pub struct CompareArgs {
    /// Checkpoint files or run directories, each with an evaluation report.
    #[arg(required = true, num_args = 2..)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Layers,
    #[value(name = "M")]
    M,
    SignalLength,
    Batch,
    #[value(name = "K")]
    K,
    P,
    Rollouts,
    Lambda,
}

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    axis: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Concurrent runs; capped by WPNODE_THREADS.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long)]
    n_starts: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    let cap = thread_cap();
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cap).build_global();

    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Sweep(a) => commands::sweep(a, cap),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

/// `WPNODE_THREADS` or the available parallelism.
fn thread_cap() -> usize {
    std::env::var("WPNODE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
