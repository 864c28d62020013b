//! `bsc`: run the incremental-learning protocol, evaluate accuracy matrices,
//! inspect feature geometry and check gradients.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation failure.

mod angles;
mod common;
mod gradcheck;
mod metrics;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use common::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "bsc",
    version,
    about = "Balanced supervised contrastive few-shot class-incremental learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pre-train, fine-tune and run every incremental session.
    Run(run::RunArgs),
    /// Summarize an accuracy-matrix CSV as PD, NLA and BMA.
    Metrics(metrics::MetricsArgs),
    /// Angular analyses of feature space.
    #[command(subcommand)]
    Angles(angles::AnglesCommand),
    /// Finite-difference check of every training objective.
    Gradcheck(gradcheck::GradcheckArgs),
}

/// Optional config file shared by several commands.
#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run::cmd_run(a),
        Command::Metrics(a) => metrics::cmd_metrics(a),
        Command::Angles(a) => angles::cmd_angles(a),
        Command::Gradcheck(a) => gradcheck::cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

pub(crate) type CliResult<T = ()> = Result<T, CliError>;
