use std::io::Write;

use clap::Parser;
use gam_cli::{run, Cli};

fn main() {
    match run(Cli::parse()) {
        Ok(lines) => {
            let mut out = std::io::stdout().lock();
            for l in lines {
                // A closed pipe is not an error for a command whose artifacts are on disk.
                if writeln!(out, "{l}").is_err() {
                    break;
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
