use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use densecap3d::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(lines) => {
            let mut out = io::stdout().lock();
            for l in lines {
                // A closed pipe (e.g. `| head`) is not an error worth reporting.
                if writeln!(out, "{l}").is_err() {
                    break;
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
