mod commands;
mod config;
mod error;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{FitArgs, PathsArgs, SelectArgs, SimulateArgs, SparsifyArgs, SummarizeArgs, TestArgs};
use error::{CliError, CliResult};

/// Joint ridge estimation of precision matrices for several data classes.
#[derive(Debug, Parser)]
#[command(name = "fusedridge", version)]
struct Cli {
    /// Seed for fold plans, permutations and simulations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit precision matrices for fixed penalties.
    Fit(FitArgs),
    /// Select penalties by cross-validation.
    Select(SelectArgs),
    /// Permutation test of equal precision matrices across classes.
    Test(TestArgs),
    /// Sparsify fitted precision matrices into graphs.
    Sparsify(SparsifyArgs),
    /// Common, differential and total networks with node centralities.
    Summarize(SummarizeArgs),
    /// Decompose a covariance into contributions of paths between two variables.
    Paths(PathsArgs),
    /// Run a simulation scenario.
    Simulate(SimulateArgs),
}

const DEFAULT_SEED: u64 = 1;

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::validation(format!("cannot start {threads} threads: {e}")))?;
    }
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match &cli.command {
        Command::Fit(args) => commands::cmd_fit(args),
        Command::Select(args) => commands::cmd_select(args, seed),
        Command::Test(args) => commands::cmd_test(args, seed),
        Command::Sparsify(args) => commands::cmd_sparsify(args),
        Command::Summarize(args) => commands::cmd_summarize(args),
        Command::Paths(args) => commands::cmd_paths(args),
        Command::Simulate(args) => commands::cmd_simulate(args, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
