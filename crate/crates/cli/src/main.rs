use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use invlearn_cli::commands;

/// Tikhonov estimation toolkit for non-linear inverse learning problems.
#[derive(Parser)]
#[command(name = "invlearn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Verbose diagnostics on standard error.
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one regularized least-squares fit and write the fit CSV.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a Monte Carlo rate study; write rows CSV and summary JSON.
    RateStudy {
        #[command(flatten)]
        common: CommonArgs,
        /// Worker threads for replicates (results are merged by key, so
        /// the output is identical for any worker count).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Tabulate the effective dimension of the kernel spectrum.
    Effdim {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Construct the minimax lower-bound family and its certificates.
    LowerBound {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a property suite: effdim | hs | concentration | lowerbound | all.
    Check { suite: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { common } => {
            commands::cmd_solve(&common.config, &common.out, common.seed, common.verbose)
        }
        Command::RateStudy { common, workers } => commands::cmd_rate_study(
            &common.config,
            &common.out,
            common.seed,
            *workers,
            common.verbose,
        ),
        Command::Effdim { common } => commands::cmd_effdim(&common.config, &common.out),
        Command::LowerBound { common } => {
            commands::cmd_lower_bound(&common.config, &common.out, common.seed)
        }
        Command::Check { suite } => commands::cmd_check(suite),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
