//! `prbfn`: design, synthesize, realize and verify a reconfigurable
//! beamforming network from a single JSON configuration.

mod artifacts;
mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "prbfn",
    version,
    about = "Reconfigurable beamforming network pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Target correlation, optimized current matrix and output-port sweep.
    Design(Args),
    /// Unit-cell targets of the cascade from the designed currents.
    Synthesize(Args),
    /// Switch states of every unit cell.
    Realize(Args),
    /// Achieved correlation, channel simulation and port selection.
    Verify(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `paths.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the optimizer, search and channel seeds.
    #[arg(long)]
    seed: Option<u64>,
}

/// Why a command stopped; each maps to a stable exit status.
#[derive(Debug)]
pub enum Failure {
    /// Artifacts were written but a quality threshold was missed.
    Quality(String),
    Synthesis(String),
    Config(String),
    Missing(String),
    Io(String),
}

impl Failure {
    pub fn missing(path: &Path, err: impl std::fmt::Display) -> Self {
        Failure::Missing(format!("{}: {err}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Quality(_) => 2,
            Failure::Synthesis(_) => 3,
            Failure::Config(_) => 64,
            Failure::Missing(_) => 66,
            Failure::Io(_) => 74,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Quality(m)
            | Failure::Synthesis(m)
            | Failure::Config(m)
            | Failure::Missing(m)
            | Failure::Io(m) => m,
        }
    }
}

type Step = fn(&RunConfig) -> Result<(), Failure>;

fn run(cli: Cli) -> Result<(), Failure> {
    let (args, command): (&Args, Step) = match &cli.command {
        Command::Design(a) => (a, commands::design),
        Command::Synthesize(a) => (a, commands::synthesize),
        Command::Realize(a) => (a, commands::realize),
        Command::Verify(a) => (a, commands::verify),
    };
    let cfg = RunConfig::load(&args.config, args.out.as_deref(), args.seed)?;
    artifacts::prepare_out_dir(&cfg)?;
    command(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = match f {
                Failure::Quality(_) => "quality",
                Failure::Synthesis(_) => "synthesis failed",
                Failure::Config(_) => "config error",
                Failure::Missing(_) => "missing input",
                Failure::Io(_) => "i/o error",
            };
            eprintln!("prbfn: {kind}: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
