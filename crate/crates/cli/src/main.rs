//! `trpfuse` command-line driver.
//!
//! Exit codes: 0 success, 1 user or data error, 2 internal error.

mod args;
mod commands;
mod config;
mod data;

use std::fs::File;
use std::panic;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{CommandFactory, FromArgMatches};

use crate::args::{Cli, Command};

const EXIT_USER: u8 = 1;
const EXIT_INTERNAL: u8 = 2;

fn init_logging(cli: &Cli) -> Result<()> {
    let env = env_logger::Env::new().filter_or("TRPFUSE_LOG", "warn");
    let mut builder = env_logger::Builder::from_env(env);
    if let Some(path) = &cli.log_file {
        let f = File::create(path).with_context(|| format!("cannot create log file {}", path.display()))?;
        builder.target(env_logger::Target::Pipe(Box::new(f)));
    }
    // a second init in the same process is harmless
    let _ = builder.try_init();
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_logging(&cli)?;
    match &cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<trpfuse_core::Error>() {
        Some(e) if e.is_internal() => EXIT_INTERNAL,
        _ => EXIT_USER,
    }
}

fn main() -> ExitCode {
    let command = Cli::command();
    let argv = match config::expand(std::env::args().collect(), &command) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USER);
        }
    };
    let cli = match command.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USER) } else { ExitCode::SUCCESS };
        }
    };
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
