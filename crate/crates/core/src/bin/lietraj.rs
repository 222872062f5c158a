use clap::{Parser, Subcommand};
use lietraj::cli::{run_command, EXIT_USAGE};
use std::path::PathBuf;
use std::process::ExitCode;

/// Trajectory optimization for rigid bodies on SO(3) x R^3.
#[derive(Parser)]
#[command(name = "lietraj", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// Flat dotted-key config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Scenario seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Termination tolerance preset: table (1e-11), figure (1e-14),
    /// ipopt-default (1e-6).
    #[arg(long, global = true)]
    tol: Option<String>,

    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference verification of every derivative family.
    Check,
    /// Forward rigid-body simulation.
    Simulate,
    /// Solve one trajectory optimization instance.
    Optimize,
    /// Multi-seed convergence sweep.
    Sweep,
    /// Kinematic-chain derivative-evaluation benchmark.
    Bench,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let name = match args.command {
        Command::Check => "check",
        Command::Simulate => "simulate",
        Command::Optimize => "optimize",
        Command::Sweep => "sweep",
        Command::Bench => "bench",
    };
    match run_command(
        name,
        args.config.as_deref(),
        args.seed,
        args.tol.as_deref(),
        args.out.as_deref(),
        args.workers,
    ) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
