use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    dirflow_cli::main_with(dirflow_cli::Cli::parse())
}
