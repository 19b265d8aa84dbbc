//! Batch driver behind the `kq` binary.

pub mod args;
mod commands;
mod output;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

pub use args::{Cli, Command};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "KQ_THREADS";

/// Marks errors that should exit with the usage status.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

/// Worker count from `KQ_THREADS`; `None` leaves the choice to rayon.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .ok()
            .filter(|&n: &usize| n > 0)
            .map(Some)
            .ok_or_else(|| UsageError(format!("{THREADS_ENV} must be a positive integer, got `{v}`")).into()),
        Err(_) => Ok(None),
    }
}

/// Parses an argument list, program name first.
pub fn parse_args<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(args)
}

pub fn run(cli: Cli) -> Result<()> {
    run_with_threads(cli, threads_from_env()?)
}

/// Runs one command on a dedicated pool of `threads` workers.
pub fn run_with_threads(cli: Cli, threads: Option<usize>) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("starting worker threads")?;
    pool.install(|| match cli.command {
        Command::Quantize(a) => commands::quantize(a),
        Command::Dequantize(a) => commands::dequantize(a),
        Command::Intervals(a) => commands::intervals(a),
        Command::Expand(a) => commands::expand(a),
        Command::Intersect(a) => commands::intersect(a),
        Command::Project(a) => commands::project(a),
        Command::Overapprox(a) => commands::overapprox(a),
        Command::Defend(a) => commands::defend(a),
        Command::Stats(a) => commands::stats(a),
        Command::Roundtrip(a) => commands::roundtrip(a),
    })
}

/// Parses the process arguments and runs. Exit status 0 on success, 1 on a
/// runtime failure, 2 on a usage error.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
