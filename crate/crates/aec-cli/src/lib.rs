//! Command-line front end for the adaptive-effort-control simulator.
//!
//! One binary, six subcommands: `train` produces a content-addressed run
//! directory; `eval`, `calibrate`, `depth`, `difficulty`, and `report`
//! analyze it. Exit codes are a stable contract: 0 success, 2 usage or
//! configuration errors (including missing upstream artifacts), 3 numerical
//! failures.

pub mod config;
pub mod errors;
pub mod manifest;
pub mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aec_core::evalkit::DEFAULT_SAMPLES_PER_TASK;
use aec_core::taskenv::Split;

use crate::errors::CliError;
use crate::ops::SamplerChoice;

#[derive(Parser)]
#[command(
    name = "aec",
    version,
    about = "Train and analyze adaptive-effort-control policies on synthetic tasks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a policy from a TOML config into runs/<run_id>/.
    Train(TrainArgs),
    /// Evaluate a checkpoint over the effort grid; write eval.csv.
    Eval(EvalCliArgs),
    /// Build the effort-calibration curve from a validation-split eval.
    Calibrate(CalibrateCliArgs),
    /// Scan error-plus-token-cost over the effort grid per tier.
    Depth(DepthCliArgs),
    /// Estimate per-task difficulty profiles (expected attempts vs budget).
    Difficulty(DifficultyCliArgs),
    /// Collate a run's artifacts into one text report.
    Report(ReportCliArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output root; defaults to $AEC_OUT, then ./runs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: aec_core::taskenv::TaskEnvError| e.to_string())
}

#[derive(Args)]
pub struct EvalCliArgs {
    /// Checkpoint file to evaluate (e.g. .../checkpoints/checkpoint_final.json).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Task split: train, validation, test, or transfer.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Comma-separated effort values; defaults to the policy's full grid.
    #[arg(long = "r-grid", value_delimiter = ',')]
    pub r_grid: Option<Vec<f64>>,
    /// Rollouts per (task, effort value).
    #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_TASK)]
    pub samples: usize,
    /// Task suite to evaluate on; defaults to the run's suite.jsonl.
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Output directory; defaults to the run's analysis/ directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CalibrateCliArgs {
    /// Run directory produced by `aec train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Also invert the curve: print the r that yields this token fraction.
    #[arg(long)]
    pub invert: Option<f64>,
    /// Output directory; defaults to the run's analysis/ directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DepthCliArgs {
    /// Run directory produced by `aec train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Base token price; tiers pay the stock ratios (1, 1/3, 1/12) of it.
    #[arg(long, default_value_t = aec_core::evalkit::DEFAULT_DEPTH_LAMBDA)]
    pub lambda: f64,
    /// Output directory; defaults to the run's analysis/ directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_sampler(s: &str) -> Result<SamplerChoice, String> {
    match s {
        "policy" => Ok(SamplerChoice::Policy),
        "uniform" => Ok(SamplerChoice::Uniform),
        other => Err(format!("unknown sampler '{other}' (expected policy or uniform)")),
    }
}

#[derive(Args)]
pub struct DifficultyCliArgs {
    /// Run directory produced by `aec train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Task split to profile.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Monte Carlo samples per task (minimum 100).
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Comma-separated token budgets; defaults to the policy's bucket menu.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<u32>>,
    /// Length source: the trained policy or a uniform bucket menu.
    #[arg(long, default_value = "policy", value_parser = parse_sampler)]
    pub sampler: SamplerChoice,
    /// Effort value the policy sampler is conditioned on.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Output directory; defaults to the run's analysis/ directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportCliArgs {
    /// Run directory produced by `aec train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Token price of the net-reward table J = accuracy - lambda * tokens.
    #[arg(long = "cost-lambda", default_value_t = 1e-4)]
    pub cost_lambda: f64,
    /// Output directory; defaults to the run's analysis/ directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => ops::cmd_train(&args.config, args.out, args.seed),
        Command::Eval(args) => ops::cmd_eval(ops::EvalArgs {
            checkpoint: args.checkpoint,
            split: args.split,
            r_grid: args.r_grid,
            samples: args.samples,
            suite: args.suite,
            out: args.out,
        }),
        Command::Calibrate(args) => ops::cmd_calibrate(ops::CalibrateArgs {
            run: args.run,
            invert: args.invert,
            out: args.out,
        }),
        Command::Depth(args) => ops::cmd_depth(ops::DepthArgs {
            run: args.run,
            lambda: args.lambda,
            out: args.out,
        }),
        Command::Difficulty(args) => ops::cmd_difficulty(ops::DifficultyArgs {
            run: args.run,
            split: args.split,
            samples: args.samples,
            budgets: args.budgets,
            sampler: args.sampler,
            r: args.r,
            out: args.out,
        }),
        Command::Report(args) => ops::cmd_report(ops::ReportArgs {
            run: args.run,
            cost_lambda: args.cost_lambda,
            out: args.out,
        }),
    }
}

/// Parses arguments and runs the selected subcommand, translating errors to
/// the exit-code contract.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Clap exits 2 on usage errors and 0 for --help/--version.
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Tolerate a hung-up reader so the exit code survives `2>&1 | head`.
            use std::io::Write;
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
