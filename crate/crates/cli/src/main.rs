use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cmd;
mod config;
mod error;
mod inputs;
mod output;

use cmd::riskmodel::Action;
use cmd::study::Study;
use config::RunConfig;
use error::CliResult;
use output::Output;

/// Scoring, risk modelling and analysis for M6-style forecasting and
/// investment competitions.
#[derive(Debug, Parser)]
#[command(name = "m6", version)]
struct Cli {
    /// Run configuration (TOML); paths inside resolve relative to it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Checks one submission file against the submission rules.
    Validate { file: PathBuf },
    /// Scores every team and writes the leaderboards.
    Score,
    /// Fits or queries the factor risk model.
    Riskmodel {
        #[command(subcommand)]
        action: RiskCommand,
    },
    /// Runs one analysis study.
    Study {
        #[arg(value_enum)]
        name: Study,
    },
    /// Draws a new asset universe from sector clusters.
    Universe,
}

#[derive(Debug, Subcommand)]
enum RiskCommand {
    Fit,
    Forecast,
    Decompose,
    Gridsearch,
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.seed, cli.out)?;
    let mut out = Output::new(&cfg.out)?;
    let result = match cli.command {
        Command::Validate { file } => cmd::validate::run(&cfg, &mut out, &file),
        Command::Score => cmd::score::run(&cfg, &mut out),
        Command::Riskmodel { action } => {
            let action = match action {
                RiskCommand::Fit => Action::Fit,
                RiskCommand::Forecast => Action::Forecast,
                RiskCommand::Decompose => Action::Decompose,
                RiskCommand::Gridsearch => Action::GridSearch,
            };
            cmd::riskmodel::run(&cfg, &mut out, action)
        }
        Command::Study { name } => cmd::study::run(&cfg, &mut out, name),
        Command::Universe => cmd::universe::run(&cfg, &mut out),
    };
    // Reports written before a failure (an invalid submission's report, say)
    // still go into the manifest.
    out.finish()?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
