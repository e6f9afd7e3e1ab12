//! The `dualcam` command line: `gen-data`, `train`, `sample`, `eval` and
//! `inspect`, plus the on-disk run manifests and command configs they share.
//!
//! Exit codes: 0 success, 1 invalid input, 2 usage, 3 runtime abort. Every
//! failure is reported as one `error: <reason>` line on stderr.

pub mod commands;
pub mod config;
pub mod export;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    /// The reason collapsed onto one line.
    pub fn reason(&self) -> String {
        self.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dualcam", version, about = "Dual-stream camera/object controllable video diffusion at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic paired-view dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the dual-stream network on a dataset directory.
    Train {
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate clips from a checkpoint under a condition spec.
    Sample {
        /// Dataset to regenerate from; overrides `dataset` in the config.
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Score generated clips against their source samples.
    Eval {
        generated: PathBuf,
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print shapes and manifests of an artifact.
    Inspect { path: PathBuf },
}

/// Runs one command and returns its stdout text.
pub fn execute(cmd: Command) -> CliResult<String> {
    match cmd {
        Command::GenData { config, out, seed, count } => commands::gen_data::run(config.as_deref(), &out, seed, count),
        Command::Train { data, config, out, seed } => commands::train::run(&data, config.as_deref(), &out, seed),
        Command::Sample {
            data,
            checkpoint,
            config,
            out,
            seed,
            steps,
            count,
        } => commands::sample::run(commands::sample::SampleArgs {
            data,
            checkpoint,
            config,
            out,
            seed,
            steps,
            count,
        }),
        Command::Eval { generated, data, out } => commands::eval::run(&generated, &data, &out),
        Command::Inspect { path } => commands::inspect::run(&path),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code, printing to stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}", e.reason());
            e.exit_code()
        }
    }
}
