//! `qbandit` — experiment runner for the queueing-bandit simulator.
//!
//! Subcommands:
//! - `run <spec.json>`: execute every (instance, policy) run in a JSON
//!   experiment spec, writing regret CSVs, config sidecars, bound
//!   overlays, and a plot script.
//! - `verify <suite>`: run acceptance checks and print one line per
//!   criterion.
//! - `bounds <instance.json>`: evaluate the bound overlay family on a
//!   slot grid and emit CSV.
//!
//! Exit codes: 0 success, 1 config/usage error, 2 invalid instance.
//! `QBANDIT_WORKERS` caps the worker pool (1 = fully sequential).

mod config;
mod runner;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "qbandit", version, about = "Queueing-bandit experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment spec and write CSV/plot artifacts.
    Run {
        /// Path to the experiment spec JSON.
        spec: PathBuf,
        /// Override the spec's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run acceptance suites: stationary, genie, dominance, regen, phase,
    /// sweep, projection, exploration, bounds, lemma9, quick, all.
    Verify {
        /// Suite name.
        suite: String,
    },
    /// Evaluate bound overlays for an instance JSON and emit CSV.
    Bounds {
        /// Path to the instance JSON ({"U":..,"K":..,"lambda":[..],"mu":[[..]]}).
        instance: PathBuf,
        /// Consistency exponent of the hypothetical policy class.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Early-stage window exponent; must exceed 1/(1-alpha).
        #[arg(long, default_value_t = 3.0)]
        gamma: f64,
        /// First slot of the evaluation grid.
        #[arg(long, default_value_t = 10)]
        t_min: u64,
        /// Last slot of the evaluation grid.
        #[arg(long, default_value_t = 200_000)]
        t_max: u64,
        /// Grid resolution in points per decade.
        #[arg(long, default_value_t = 40)]
        per_decade: u32,
        /// Output file (stdout if omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn configure_workers() {
    if let Ok(raw) = std::env::var("QBANDIT_WORKERS") {
        match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => {
                // Ignore the error if a pool already exists (e.g. tests).
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring invalid QBANDIT_WORKERS={raw:?}"),
        }
    }
}

fn main() -> ExitCode {
    configure_workers();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { spec, out_dir } => runner::run(&spec, out_dir.as_deref()),
        Command::Verify { suite } => verify::run(&suite),
        Command::Bounds {
            instance,
            alpha,
            gamma,
            t_min,
            t_max,
            per_decade,
            output,
        } => runner::bounds(&instance, alpha, gamma, t_min, t_max, per_decade, output.as_deref()),
    }
}
