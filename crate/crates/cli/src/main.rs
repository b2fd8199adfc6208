use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    malens_cli::run(malens_cli::Cli::parse())
}
