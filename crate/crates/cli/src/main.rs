//! `tdcrop`: command-line driver for the rod solver, dataset generation,
//! surrogate training, evaluation, the studies and the timing benchmark.
//!
//! Exit codes: 0 on success, 1 on runtime or model failures, 2 on usage and
//! configuration errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Common, InlineDesign, StudyKind};

#[derive(Parser)]
#[command(
    name = "tdcrop",
    version,
    about = "Tendon-driven continuum robot solver and neural-operator surrogates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config of the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override (a study then runs this single seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config's).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one design and write its equilibrium as CSV plus a JSON sidecar.
    Simulate(SimulateArgs),
    /// Sample and solve a dataset.
    GenData,
    /// Train a surrogate.
    Train {
        /// Continue from a checkpoint that holds optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score trained checkpoints on a dataset.
    Eval,
    /// Run an experiment grid.
    Study {
        #[command(subcommand)]
        kind: StudyCommand,
    },
    /// Time batch inference (and optionally training epochs).
    Bench,
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Held-out error against training-set size.
    Convergence,
    /// Held-out error against dropout rate.
    Dropout,
    /// Error on out-of-distribution bins.
    Ood,
}

#[derive(Args)]
struct SimulateArgs {
    /// Design vector as JSON (field names as in the library).
    #[arg(long, conflicts_with_all = ["offsets", "pitches", "tensions", "radius", "length", "youngs"])]
    design: Option<PathBuf>,
    /// Tendon offsets ρ₁..ρ₄ in m.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    offsets: Option<Vec<f64>>,
    /// Tendon pitches φ₁..φ₄ in rad/m.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pitches: Option<Vec<f64>>,
    /// Tendon tensions τ₁..τ₄ in N.
    #[arg(long, value_delimiter = ',')]
    tensions: Option<Vec<f64>>,
    /// Backbone radius in m.
    #[arg(long)]
    radius: Option<f64>,
    /// Backbone length in m.
    #[arg(long)]
    length: Option<f64>,
    /// Young's modulus in Pa.
    #[arg(long)]
    youngs: Option<f64>,
    /// Solve on this many single RK4 steps (output has steps + 1 rows).
    #[arg(long)]
    steps: Option<usize>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let common = Common {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Simulate(args) => {
            let inline = InlineDesign {
                offsets: args.offsets,
                pitches: args.pitches,
                tensions: args.tensions,
                radius: args.radius,
                length: args.length,
                youngs: args.youngs,
            };
            commands::simulate(&common, args.design.as_deref(), &inline, args.steps)
        }
        Command::GenData => commands::gen_data(&common),
        Command::Train { resume } => commands::train_cmd(&common, resume.as_deref()),
        Command::Eval => commands::eval_cmd(&common),
        Command::Study { kind } => {
            let kind = match kind {
                StudyCommand::Convergence => StudyKind::Convergence,
                StudyCommand::Dropout => StudyKind::Dropout,
                StudyCommand::Ood => StudyKind::Ood,
            };
            commands::study_cmd(&common, kind)
        }
        Command::Bench => commands::bench_cmd(&common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(config::exit_code(&err) as u8)
        }
    }
}
