//! `dashgauss` command-line front end.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical failure.
//! `DASH_THREADS` caps the number of worker threads.

mod args;
mod commands;
mod manifest;
mod output;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use crate::args::{Cli, Command};

const EXIT_INPUT: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("DASH_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .with_context(|| format!("DASH_THREADS={value:?} is not a positive integer"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("cannot configure the worker pool")
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Analyze(args) => commands::analyze(&args),
        Command::Fit(args) => commands::fit(&args),
        Command::Compare(args) => commands::compare(&args),
        Command::Replay(args) => commands::replay(&args.manifest, args.out.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<dashgauss::Error>())
        .any(|e| !e.is_input_error());
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
