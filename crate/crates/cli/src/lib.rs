//! Command-line frontend: dataset generation, GAN training, masks,
//! inpainting, evaluation and gradient checking.
//!
//! Exit codes: 0 success, 1 verification or runtime failure, 2 usage or
//! input error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod commands;
pub mod config;
pub mod manifest;

pub use manifest::{FileHash, RunManifest, RUN_MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "inpaint", version, about = "Semantic image inpainting with a deep generative model")]
pub struct Cli {
    /// `key = value` config file; keys are prefixed by section (`gan.`, `inpaint.`, ...).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads. Results do not depend on this value.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a procedural dataset into a directory of PNGs with a manifest.
    GenData(commands::gen_data::Args),
    /// Train (or resume training) the GAN on a dataset directory.
    Train(commands::train::Args),
    /// Write a mask PNG (white = known, black = missing).
    MakeMask(commands::make_mask::Args),
    /// Inpaint images with a trained checkpoint.
    Inpaint(commands::inpaint::Args),
    /// Run the method × mask-family evaluation grid and write a JSON report.
    Evaluate(commands::evaluate::Args),
    /// Check every autodiff operation and the inversion objective against
    /// finite differences.
    GradCheck(commands::grad_check::Args),
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_USAGE,
            error: error.into(),
        }
    }

    pub fn failure(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_FAILURE,
            error: error.into(),
        }
    }
}

/// Input problems exit with 2, everything else with 1.
impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> Self {
        use inpaint_core::Error as E;
        let input = error.chain().any(|c| {
            c.downcast_ref::<std::io::Error>().is_some()
                || c.downcast_ref::<serde_json::Error>().is_some()
                || matches!(
                    c.downcast_ref::<E>(),
                    Some(
                        E::InvalidArgument(_)
                            | E::ShapeMismatch { .. }
                            | E::Checkpoint(_)
                            | E::Image { .. }
                            | E::Io(_)
                            | E::Json(_)
                    )
                )
        });
        Self {
            code: if input { EXIT_USAGE } else { EXIT_FAILURE },
            error,
        }
    }
}

impl From<inpaint_core::Error> for CliError {
    fn from(e: inpaint_core::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub struct Context {
    pub config: Option<config::ConfigFile>,
    pub threads: usize,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            e.code
        }
    }
}

pub fn execute(cli: Cli) -> CliResult {
    let config = match &cli.config {
        Some(p) => Some(config::ConfigFile::load(p).map_err(CliError::usage)?),
        None => None,
    };
    let ctx = Context {
        config,
        threads: cli.threads as usize,
    };
    match cli.command {
        Command::GenData(a) => commands::gen_data::run(&ctx, a),
        Command::Train(a) => commands::train::run(&ctx, a),
        Command::MakeMask(a) => commands::make_mask::run(&ctx, a),
        Command::Inpaint(a) => commands::inpaint::run(&ctx, a),
        Command::Evaluate(a) => commands::evaluate::run(&ctx, a),
        Command::GradCheck(a) => commands::grad_check::run(&ctx, a),
    }
}
