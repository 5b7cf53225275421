//! `morphproj` command-line pipeline.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for data errors.

mod cli;
mod config_file;
mod manifest;
mod pipeline;
mod tagging;
mod training;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use morphproj::Execution;

use cli::{Cli, Command};
use manifest::RunManifest;

/// A problem with how the tool was invoked, as opposed to with its data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const USAGE: u8 = 1;
const DATA: u8 = 2;

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let expanded = match config_file::expand(argv) {
        Ok(e) => e,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(&expanded.argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(USAGE),
            };
        }
    };
    init_logging(cli.verbose);
    match run(&cli, expanded.file) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    if e.is::<UsageError>() {
        ExitCode::from(USAGE)
    } else {
        ExitCode::from(DATA)
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn primary_output(command: &Command) -> &PathBuf {
    match command {
        Command::Align(a) => &a.out_forward,
        Command::Project(a) => &a.out_lattices,
        Command::Cluster(a) => &a.out,
        Command::Train(a) => &a.out,
        Command::SupervisedTrain(a) => &a.out,
        Command::Tag(a) => &a.out,
        Command::Evaluate(a) => &a.out,
    }
}

fn run(cli: &Cli, config_file: Option<(PathBuf, Vec<u8>)>) -> anyhow::Result<()> {
    let exec = match cli.threads {
        Some(0) => return Err(UsageError("--threads must be at least 1".into()).into()),
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    };
    let mut manifest = RunManifest::new(cli.command.name());
    if let Some((path, bytes)) = &config_file {
        manifest.record_input("config", path, bytes);
    }
    with_threads(cli.threads, || dispatch(&cli.command, exec, &mut manifest))??;
    let path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| manifest::default_path(primary_output(&cli.command)));
    std::fs::write(&path, manifest.to_json())
        .map_err(|e| anyhow::anyhow!("writing manifest {}: {e}", path.display()))?;
    Ok(())
}

fn dispatch(command: &Command, exec: Execution, m: &mut RunManifest) -> anyhow::Result<()> {
    match command {
        Command::Align(a) => pipeline::align(a, exec, m),
        Command::Project(a) => pipeline::project(a, exec, m),
        Command::Cluster(a) => pipeline::cluster(a, exec, m),
        Command::Train(a) => training::train(a, exec, m),
        Command::SupervisedTrain(a) => training::supervised_train(a, exec, m),
        Command::Tag(a) => tagging::tag(a, exec, m),
        Command::Evaluate(a) => tagging::evaluate(a, exec, m),
    }
}

#[cfg(feature = "parallel")]
fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> anyhow::Result<R> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R>(threads: Option<usize>, f: impl FnOnce() -> R) -> anyhow::Result<R> {
    if threads.is_some_and(|n| n > 1) {
        log::warn!("built without the parallel feature; running on one thread");
    }
    Ok(f())
}
