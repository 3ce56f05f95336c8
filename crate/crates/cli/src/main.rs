//! `coalsim`: chain probabilities, cluster-size optimization, protocol
//! simulation and the oracle suite from the command line.
//!
//! Exit codes: 0 on success, 1 on a configuration error, 2 when `validate`
//! finds a failing check.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{ChainArgs, ConfigFile, OptimizeArgs, SimulateArgs, ValidateArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] coalition_core::Error),
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Parser)]
#[command(name = "coalsim", version, about = "Coalition formation for spectrum sharing")]
struct Cli {
    /// JSON config file with one section per command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the command's section.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-level transition probabilities and absorption time.
    Chain(ChainArgs),
    /// Optimal cluster size over an SNR grid.
    Optimize(OptimizeArgs),
    /// Monte Carlo runs of the protocol against the chain model.
    Simulate(SimulateArgs),
    /// Run the oracle suite.
    Validate(ValidateArgs),
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Chain(args) => commands::chain(args.merge(&file.chain).resolve()?)?,
        Command::Optimize(mut args) => {
            args.seed = cli.seed.or(args.seed);
            commands::optimize(args.merge(&file.optimize).resolve()?)?
        }
        Command::Simulate(mut args) => {
            args.seed = cli.seed.or(args.seed);
            commands::simulate(args.merge(&file.simulate).resolve()?)?
        }
        Command::Validate(mut args) => {
            args.seed = cli.seed.or(args.seed);
            let failures = commands::validate(args.merge(&file.validate))?;
            if failures > 0 {
                eprintln!("{failures} check(s) failed");
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
