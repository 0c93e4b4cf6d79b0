//! Command-line front end: `quasienergies`, `anholonomy`, `holonomy` and
//! `verify`, each reading one JSON config and writing into an output directory.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    anholonomy_report, cmd_anholonomy, cmd_holonomy, cmd_quasienergies, cmd_verify, holonomy_report, sweep_quasienergies,
    verify_report, CliError, Outcome, Pipeline, SCHEMA_VERSION,
};
pub use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "floquet-gerbe", version, about = "Adiabatic Floquet phases, quasienergy atlases and gerbe holonomies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps and quadratures.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quasienergy trajectories over λ for each frequency ratio (CSV).
    Quasienergies(CommonArgs),
    /// Branch permutation, block shifts and ν after 2π and 4π loops.
    Anholonomy(CommonArgs),
    /// Surface holonomy, dynamical phase and exact-propagation comparison.
    Holonomy(CommonArgs),
    /// Runs every invariant suite; nonzero exit status on failure.
    Verify(CommonArgs),
}

/// Runs one parsed command and returns the process exit code
/// (0 success, 2 invalid configuration, 1 invariant or runtime failure).
pub fn run(cli: Cli) -> u8 {
    let (args, name) = match &cli.command {
        Command::Quasienergies(a) => (a, "quasienergies"),
        Command::Anholonomy(a) => (a, "anholonomy"),
        Command::Holonomy(a) => (a, "holonomy"),
        Command::Verify(a) => (a, "verify"),
    };
    if let Some(n) = args.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return 2;
        }
        // a global pool may already exist when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid configuration: {e}");
            return 2;
        }
    };
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let result = match cli.command {
        Command::Quasienergies(_) => cmd_quasienergies(&cfg, &out),
        Command::Anholonomy(_) => cmd_anholonomy(&cfg, &out),
        Command::Holonomy(_) => cmd_holonomy(&cfg, &out),
        Command::Verify(_) => cmd_verify(&cfg, &out),
    };
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{name}: wrote {}", f.display());
            }
            if outcome.passed {
                0
            } else {
                eprintln!("{name}: invariant failure");
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
