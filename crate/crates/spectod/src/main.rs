use std::process::ExitCode;

use clap::Parser;
use spectod::cli::Cli;
use spectod::commands::{dispatch, exit_code};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
