//! The `malens` command line.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use malens_core::report::Format;
use malens_core::verdict::Step;

pub use error::{Failure, Outcome};

#[derive(Debug, Parser)]
#[command(
    name = "malens",
    version,
    about = "Nearest-token analysis of spoken language model adapter outputs"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "malens.toml")]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Validate inputs without provider calls or writes.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Nearest LM token for every frame.
    Neighbors,
    /// Per-word verdicts and distribution reports.
    Verdicts {
        /// Ladder steps to run, e.g. `3a,3b`.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<Step>>,
    },
    /// Linear probes over pooled words and phones.
    Probe,
    /// Spoken STS: Spearman correlation of pooled-sentence cosines.
    Sts {
        /// Pair list, overriding `sts.pairs`.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// WER and language match of model transcriptions.
    Wer {
        /// Hypothesis files, overriding `wer.hypotheses`.
        #[arg(long = "hyp")]
        hypotheses: Vec<PathBuf>,
    },
    /// Re-emit or merge saved distribution reports.
    Report {
        #[arg(long, default_value = "table")]
        format: Format,
        /// Also emit reports summed over every run under this id.
        #[arg(long)]
        merge_as: Option<String>,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output directories of earlier `verdicts` runs (default: the configured one).
        runs: Vec<PathBuf>,
    },
    /// Choose the semantic threshold from SimLex-style human ratings.
    Calibrate {
        #[arg(long)]
        simlex: Option<PathBuf>,
        #[arg(long)]
        high_cutoff: Option<f64>,
    },
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Runs a parsed command line and maps failures onto exit codes.
pub fn run(cli: Cli) -> ExitCode {
    init_logging(cli.global.verbose);
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
