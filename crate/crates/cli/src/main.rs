//! `envreg`: simulate, select a rank, fit, evaluate and summarize envelope
//! covariance regressions from CSV data.

mod artifacts;
mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvalArgs, FitArgs, RankArgs, SimulateArgs, SummarizeArgs};
use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "envreg", version, about = "Envelope models for mean and covariance regression")]
struct Cli {
    /// TOML file with [simulate], [fit], [summarize] and [eval] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel sections (1 gives bit-reproducible output).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw Y, X and the true parameters from the simulation model.
    Simulate(SimulateArgs),
    /// Print the envelope dimension selected from the singular values of Y.
    Rank(RankArgs),
    /// Fit the envelope model by Monte Carlo EM.
    Fit(FitArgs),
    /// Contrast-rotated posterior summaries of a fit.
    Summarize(SummarizeArgs),
    /// Stein's loss against a truth, or the simulation experiments.
    Eval(EvalArgs),
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    let run = RunConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate_cmd(a, &run),
        Command::Rank(a) => commands::rank_cmd(a),
        Command::Fit(a) => commands::fit_cmd(a, &run),
        Command::Summarize(a) => commands::summarize_cmd(a, &run),
        Command::Eval(a) => commands::eval_cmd(a, &run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
