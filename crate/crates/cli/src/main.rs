use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pardec::run::{run_scenario, RunOptions, Stage};
use rayon::prelude::*;

/// Decoherence in alternative global decompositions of coupled oscillators.
#[derive(Parser)]
#[command(name = "pardec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the Hamiltonian and report the modes.
    Build(Common),
    /// Center-of-mass and normal-mode transforms, with closed-form constant checks.
    Transform(Common),
    /// Evolve the first branch and report moments and conservation.
    Evolve(Common),
    /// Decoherence function and time for the configured structures.
    Decohere(Common),
    /// Side-by-side S+E and CM+R decoherence under one global unitary.
    Compare(Common),
    /// Fock-space crosscheck of the Gaussian engine (two-mode models).
    Oracle(Common),
    /// Integrate the position-measurement master equation.
    MasterEq(Common),
    /// Build, transform, evolve and compare in one go.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file; repeat for several scenarios.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also run the Fock-space crosscheck and write its deviation report.
    #[arg(long)]
    oracle: bool,
    /// Scenarios run concurrently.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Seed for randomized sweeps (overrides `run.seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn one(path: &Path, stage: Stage, opts: &RunOptions) -> u8 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return 1;
        }
    };
    match run_scenario(&text, stage, opts) {
        Ok(report) => {
            for f in &report.files {
                println!("{}", f.display());
            }
            for issue in &report.trust_issues {
                eprintln!("{}: untrusted: {issue}", path.display());
            }
            report.exit_code()
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, c) = match cli.command {
        Command::Build(c) => (Stage::Build, c),
        Command::Transform(c) => (Stage::Transform, c),
        Command::Evolve(c) => (Stage::Evolve, c),
        Command::Decohere(c) => (Stage::Decohere, c),
        Command::Compare(c) => (Stage::Compare, c),
        Command::Oracle(c) => (Stage::Oracle, c),
        Command::MasterEq(c) => (Stage::MasterEq, c),
        Command::Run(c) => (Stage::All, c),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(c.workers.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    let several = c.configs.len() > 1;
    let codes: Vec<u8> = pool.install(|| {
        c.configs
            .par_iter()
            .map(|path| {
                // several scenarios get a subdirectory each
                let subdir = several.then(|| PathBuf::from(path.file_stem().unwrap_or_default()));
                one(path, stage, &RunOptions { out: c.out.clone(), oracle: c.oracle, seed: c.seed, subdir })
            })
            .collect()
    });
    ExitCode::from(codes.into_iter().max().unwrap_or(0))
}
