//! `proposal-programs` command-line harness.

mod checks;
mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::checks::Suite;
use crate::commands::MhFixture;

/// Bad configuration or arguments. Exit code 1.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

/// At least one self-check failed. Exit code 3.
#[derive(Debug)]
pub struct CheckFailure(pub Vec<String>);

impl fmt::Display for CheckFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} check(s) failed: {}", self.0.len(), self.0.join(", "))
    }
}

impl std::error::Error for CheckFailure {}

#[derive(Parser)]
#[command(name = "proposal-programs", version, about = "Proposal program experiments and oracle self-checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset and its ground-truth latents from the model.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out stem>.latents.json` next to the CSV.
        #[arg(long)]
        latents_out: Option<PathBuf>,
    },
    /// Train the configured proposal and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out stem>.objective.csv` next to the checkpoint.
        #[arg(long)]
        objective_out: Option<PathBuf>,
    },
    /// Importance sampling on a dataset with a trained or prior proposal.
    InferIs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required_unless_present = "prior", conflicts_with = "prior")]
        checkpoint: Option<PathBuf>,
        /// Propose from the model prior instead of a trained proposal.
        #[arg(long)]
        prior: bool,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Multiply the unnormalized target by this constant.
        #[arg(long, default_value_t = 1.0)]
        target_scale: f64,
    },
    /// Exact-enumeration identities and statistical checks of the estimators.
    OracleCheck {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        /// Directory of reference marginal files.
        #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/test-fixtures"))]
        fixtures: PathBuf,
    },
    /// Metropolis-Hastings with a proposal program on a discrete fixture.
    MhDemo {
        #[arg(long, value_enum)]
        fixture: MhFixture,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("PROPOSAL_PROGRAMS_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ValidationError(format!("PROPOSAL_PROGRAMS_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GenerateData { config, out, latents_out } => commands::generate_data(&config, &out, latents_out),
        Command::Train { config, out, objective_out } => commands::train(&config, &out, objective_out),
        Command::InferIs {
            config,
            checkpoint,
            prior,
            data,
            out,
            target_scale,
        } => {
            let source = if prior {
                commands::ProposalSource::Prior
            } else {
                commands::ProposalSource::Checkpoint(checkpoint.expect("clap enforces --checkpoint"))
            };
            commands::infer_is(&config, source, &data, &out, target_scale)
        }
        Command::OracleCheck { suite, fixtures } => checks::run(suite, &fixtures),
        Command::MhDemo { fixture, steps, k, seed, out } => commands::mh_demo(fixture, steps, k, seed, &out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ValidationError>().is_some() {
        1
    } else if err.downcast_ref::<CheckFailure>().is_some() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
