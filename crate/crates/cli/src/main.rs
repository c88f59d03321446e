//! `mage-lab`: generate rosters, train runs and summarize them.
//!
//! Exit codes: 0 success, 1 bad input or configuration, 2 failure while
//! running.

mod commands;
mod config;
mod table;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A problem with the user's input that the core library does not own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "mage-lab", version, about = "Continual-learning lab for modality-keyed adapters")]
struct Cli {
    /// Output root; relative config paths resolve against it.
    #[arg(long, global = true, env = "MAGE_LAB_OUT", default_value = "mage-lab-out")]
    out: PathBuf,

    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic task roster.
    Generate(commands::generate::GenerateArgs),
    /// Train one run per seed.
    Run(commands::run::RunArgs),
    /// Metric table over completed runs.
    Report(commands::report::ReportArgs),
    /// Evaluate stage checkpoints on any roster task.
    CrossEval(commands::inspect::CrossEvalArgs),
    /// Mean absolute parameter change between two stages.
    Heatmap(commands::inspect::HeatmapArgs),
    /// Recompute the shipped reference tables and compare with their reported values.
    FixturesCheck(FixturesArgs),
}

#[derive(Args, Debug)]
struct FixturesArgs {
    /// Allowed absolute difference from a reported value.
    #[arg(long, default_value_t = 0.005)]
    tolerance: f64,
}

pub struct Context {
    pub out: PathBuf,
    pub config: config::ExperimentConfig,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<mage_core::Error>() {
            return if e.is_user_error() { 1 } else { 2 };
        }
    }
    2
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let config = config::ExperimentConfig::load(cli.config.as_deref())?;
    let ctx = Context { out: cli.out, config };
    match cli.command {
        Command::Generate(a) => commands::generate::run(&ctx, a),
        Command::Run(a) => commands::run::run(&ctx, a),
        Command::Report(a) => commands::report::run(&ctx, a),
        Command::CrossEval(a) => commands::inspect::cross_eval(&ctx, a),
        Command::Heatmap(a) => commands::inspect::heatmap(&ctx, a),
        Command::FixturesCheck(a) => commands::report::fixtures_check(a.tolerance),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
