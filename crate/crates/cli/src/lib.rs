//! Command-line front end for the cafs toolkit.
//!
//! Every subcommand reads its inputs from declared paths, writes its
//! artifacts to declared paths and logs to stderr. Exit codes: 0 success,
//! 1 usage or validation error, 2 infeasible request, 3 data error.

mod commands;
mod error;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

pub use commands::{
    cmd_act, cmd_aos, cmd_pseudo_label, cmd_scores, cmd_simulate, cmd_split, ActArgs, AosArgs, CoverageFile,
    CoverageReport, FoldRef, PseudoLabelArgs, ScoresArgs, SimulateArgs, SplitArgs,
};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "cafs",
    version,
    about = "Class-adaptive thresholds and oversampling for segmentation self-training"
)]
pub struct Cli {
    /// Worker threads for per-image work; output does not depend on it.
    #[arg(long, global = true, env = "CAFS_JOBS")]
    pub jobs: Option<usize>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build class-covering validation folds.
    Split(SplitArgs),
    /// Per-class IoU of predictions on a fold.
    Scores(ScoresArgs),
    /// Search per-class confidence thresholds.
    Act(ActArgs),
    /// Plan and apply class-wise oversampling.
    Aos(AosArgs),
    /// Threshold probability maps into pseudo-label rasters.
    PseudoLabel(PseudoLabelArgs),
    /// Generate a synthetic workspace.
    Simulate(SimulateArgs),
}

/// Run one parsed command on the current thread pool.
pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Split(a) => cmd_split(a),
        Command::Scores(a) => cmd_scores(a),
        Command::Act(a) => cmd_act(a),
        Command::Aos(a) => cmd_aos(a),
        Command::PseudoLabel(a) => cmd_pseudo_label(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Run a parsed command line, honouring `--jobs`.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(|| execute(&cli.command))
        }
        None => execute(&cli.command),
    }
}

/// Parse `args`, run, and translate the outcome into an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
