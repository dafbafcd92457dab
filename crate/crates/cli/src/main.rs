use std::process::ExitCode;

use adaptlab_cli::{run, Cli, Command};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if cli.command == Command::Verify {
                let path = outcome.manifest.outputs.keys().find(|k| k.ends_with("summary.csv"));
                if let Some(p) = path {
                    eprintln!("summary: {p}");
                }
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("verification failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
