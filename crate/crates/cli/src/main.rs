use std::process::ExitCode;

use bnne_cli::{dispatch, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.text);
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
