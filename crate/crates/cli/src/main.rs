//! Command-line front end: run scenarios, sweep the video experiment, and
//! cross-check each algorithm against an independent reference.
//!
//! Exit codes: 0 on success, 1 on command-line usage errors, 2 when a
//! scenario fails to load or a run cannot be carried out, 3 when a
//! verification check finds a deviation.

mod commands;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use femtosim_core::config::PolicyChoice;
use femtosim_core::trace::TraceFormat;

#[derive(Parser)]
#[command(
    name = "femtosim",
    version,
    about = "Energy-aware broadcast caching simulator for a small cell"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the cell simulation and write trace artifacts.
    Simulate(SimulateArgs),
    /// Cross-check algorithms against independent reference computations.
    Verify(VerifyArgs),
    /// Sweep streaming-video outage against channel quality.
    Video(VideoArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for trace artifacts (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Policy to run; repeat for several. Defaults to the scenario's policy.
    #[arg(long = "policy", value_parser = clap::value_parser!(PolicyChoice))]
    policies: Vec<PolicyChoice>,
    /// Explicit seed; repeat for several. Overrides the replication seeds.
    #[arg(long = "seed", conflicts_with = "replications")]
    seeds: Vec<u64>,
    /// Number of replications, overriding the scenario.
    #[arg(long)]
    replications: Option<u32>,
    /// Trace encoding: csv or jsonl.
    #[arg(long, default_value = "csv", value_parser = clap::value_parser!(TraceFormat))]
    format: TraceFormat,
    /// Also record the per-slot detector trace (large).
    #[arg(long)]
    detector_trace: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Component to check; repeat for several. Defaults to all of them.
    #[arg(long = "component", value_parser = clap::value_parser!(verify::Component))]
    components: Vec<verify::Component>,
    /// Base seed for the randomized checks.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct VideoArgs {
    /// Scenario description (TOML); must carry a [video] section.
    #[arg(long)]
    config: PathBuf,
    /// Directory for the sweep output (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Seed for the per-point Monte Carlo runs. Defaults to the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    /// Trace encoding: csv or jsonl.
    #[arg(long, default_value = "csv", value_parser = clap::value_parser!(TraceFormat))]
    format: TraceFormat,
}

/// How a command ended, beyond plain success.
enum Failure {
    /// The inputs could not be turned into a runnable experiment.
    Invalid(anyhow::Error),
    /// A verification check measured a deviation beyond its tolerance.
    VerificationFailed { failed: usize, total: usize },
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure::Invalid(err)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) =>
        {
            print!("{err}");
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };

    let outcome = match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Verify(args) => verify::run(&args),
        Command::Video(args) => commands::video(&args),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
        Err(Failure::VerificationFailed { failed, total }) => {
            eprintln!("verification failed: {failed} of {total} checks out of tolerance");
            ExitCode::from(3)
        }
    }
}
