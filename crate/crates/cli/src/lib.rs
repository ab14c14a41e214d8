//! `scorewalk` command-line front end: TOML configs in, CSV and PGM
//! artifacts out. Every artifact starts with a `#` metadata header
//! (command, config hash, seed, version); the data below it depends only
//! on the config and seed.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod toy;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{Context, GlobalArgs};
pub use error::{exit, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "scorewalk", version, about = "Score-based sampling experiments on analytic and trained sources")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory; defaults to the config's `out`, then $SCOREWALK_OUT,
    /// then ./scorewalk-out.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Overrides the config's chain count.
    #[arg(long, global = true)]
    pub chains: Option<u64>,

    /// Only errors are printed.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an MLP denoiser; writes a checkpoint, its sidecar and the loss curve.
    Train,
    /// Unconditional sampling.
    Sample,
    /// Posterior sampling given an observation file.
    SampleCond,
    /// Simulate `y = A x + eta n` from a ground-truth file.
    MakeMeasurement,
    /// Score sample files against a target or a reference file.
    Eval,
    /// Run a bundled toy experiment: schedules, temperature or conditional.
    Reproduce {
        /// Experiment id.
        figure: String,
    },
}

impl Cli {
    pub fn global(&self) -> GlobalArgs {
        GlobalArgs {
            config: self.config.clone(),
            seed: self.seed,
            out: self.out.clone(),
            chains: self.chains,
            quiet: self.quiet,
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let args = cli.global();
    let load = |name| Context::load(name, &args);
    match &cli.command {
        Command::Train => commands::train(&load("train")?),
        Command::Sample => commands::sample(&load("sample")?),
        Command::SampleCond => commands::sample_cond(&load("sample-cond")?),
        Command::MakeMeasurement => commands::make_measurement(&load("make-measurement")?),
        Command::Eval => commands::eval(&load("eval")?),
        Command::Reproduce { figure } => commands::reproduce(figure, &args),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Usage errors exit through clap.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::parse_from(argv);
    match run(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
