//! `sfr`: pooling, matching, evaluation, toy training and self-checks for
//! spatial feature reconstruction.
//!
//! Exit codes: 0 success, 2 input error, 3 data mismatch, 4 convergence
//! failure, 5 verification failure.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ConfigArgs;

#[derive(Debug, Parser)]
#[command(name = "sfr", version, about = "Spatial feature reconstruction matching")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pool an SFRF feature map into global and multi-scale spatial features.
    Pool {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank gallery entries for every probe and summarize CMC / mAP.
    Match {
        /// JSON-lines manifest of gallery feature files.
        #[arg(long)]
        gallery: PathBuf,
        /// JSON-lines manifest of probe feature files.
        #[arg(long)]
        probes: PathBuf,
        /// Rankings CSV.
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON; defaults to the rankings path with `.summary.json`.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Merge each subject's entries into one dictionary.
        #[arg(long)]
        subject_dictionary: bool,
    },
    /// Compute CMC and mAP from a rankings CSV.
    Eval {
        #[arg(long)]
        rankings: PathBuf,
        /// Manifest(s) mapping probe and gallery ids to subjects.
        #[arg(long, required = true)]
        truth: Vec<PathBuf>,
        /// Output directory; defaults to the rankings' directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy encoder on synthetic identities and report rank-1.
    TrainDemo {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle suite against the fast paths.
    Verify {
        /// Include per-case errors.
        #[arg(long)]
        verbose: bool,
        /// Perturb the fast paths so every check must fail.
        #[arg(long)]
        inject_fault: bool,
    },
}

fn run(cli: Cli) -> Result<(), exit::CliError> {
    let cfg = cli.config.resolve()?;
    match cli.command {
        Command::Pool { input, out } => commands::pool(&input, &out, &cfg),
        Command::Match {
            gallery,
            probes,
            out,
            summary,
            subject_dictionary,
        } => commands::match_probes(
            commands::MatchArgs {
                gallery: &gallery,
                probes: &probes,
                out: &out,
                summary: summary.as_deref(),
                subject_dictionary,
            },
            &cfg,
        ),
        Command::Eval { rankings, truth, out } => commands::eval(&rankings, &truth, out.as_deref()),
        Command::TrainDemo { out } => commands::train_demo(&out, &cfg),
        Command::Verify { verbose, inject_fault } => commands::verify(verbose, inject_fault, &cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sfr: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
