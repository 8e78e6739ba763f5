//! `crossflow` command-line front end.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Exit codes shared by every command.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INPUT: u8 = 1;
    pub const NOT_CONVERGED: u8 = 2;
    pub const VALIDATION: u8 = 3;
}

#[derive(Debug, Parser)]
#[command(name = "crossflow", version, about = "Minimum-time intersection crossing for connected autonomous vehicles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a scenario and write trajectory, metrics, validation, iteration log and manifest.
    Solve {
        scenario: PathBuf,
        #[command(flatten)]
        problem: ProblemFlags,
        #[command(flatten)]
        output: OutputFlags,
    },
    /// Print the theoretical lower bound on the crossing time.
    Bound { scenario: PathBuf },
    /// Audit a trajectory file against a scenario.
    Validate {
        scenario: PathBuf,
        trajectory: PathBuf,
        #[arg(long)]
        sample_dt: Option<f64>,
        /// Collocation degree used to interpolate between trajectory samples.
        #[arg(long)]
        degree: Option<usize>,
    },
    /// Solve for several energy weights and flag the non-dominated points.
    Sweep {
        scenario: PathBuf,
        /// Comma-separated list, e.g. `0,0.1,1`.
        #[arg(long, value_delimiter = ',', conflicts_with = "gamma_range", required_unless_present = "gamma_range")]
        gammas: Vec<f64>,
        /// `start:stop:count`, evenly spaced and inclusive.
        #[arg(long)]
        gamma_range: Option<String>,
        #[command(flatten)]
        problem: ProblemFlags,
        #[command(flatten)]
        output: OutputFlags,
    },
    /// Write a seeded random scenario.
    Generate {
        vehicles: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        allow_right_turns: bool,
        /// Destination file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the command recorded in a manifest, writing to a new location.
    Replay {
        manifest: PathBuf,
        /// Output directory, or output file for a replayed `generate`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ProblemFlags {
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Diagonal of the pose-error weight as `qx,qy,qtheta`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub q: Option<Vec<f64>>,
    #[arg(long)]
    pub intervals: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub kkt_tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub prune_pairs: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OutputFlags {
    #[arg(long, default_value = "crossflow-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub sample_dt: Option<f64>,
    /// Record wall-clock times in the artifacts (makes them run-dependent).
    #[arg(long)]
    pub timing: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::INPUT } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = crossflow::exec::with_thread_cap(move || match cli.command {
        Command::Solve { scenario, problem, output } => commands::solve(&scenario, &problem, &output),
        Command::Bound { scenario } => commands::bound(&scenario),
        Command::Validate { scenario, trajectory, sample_dt, degree } => {
            commands::validate(&scenario, &trajectory, sample_dt, degree)
        }
        Command::Sweep { scenario, gammas, gamma_range, problem, output } => {
            commands::sweep(&scenario, gammas, gamma_range.as_deref(), &problem, &output)
        }
        Command::Generate { vehicles, seed, allow_right_turns, out } => {
            commands::generate(vehicles, seed, allow_right_turns, out.as_deref())
        }
        Command::Replay { manifest, out } => commands::replay(&manifest, &out),
    });
    ExitCode::from(code)
}
