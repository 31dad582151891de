mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use grnnctl_core::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "grnnctl",
    version,
    about = "Train and certify distributed recurrent controllers on networked linear systems"
)]
struct Cli {
    /// TOML experiment config; built-in defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the seed from the config
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for input and output artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads; 0 picks one per core
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Write a messages.csv trace of everything the distributed engine sends
    #[arg(long, global = true)]
    log_messages: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a clustered network and its linear dynamics
    Generate,
    /// Train the distributed controller on the generated system
    Train,
    /// Roll out a controller and report closed-loop costs
    Evaluate {
        /// One of: zero, lqr, grnn
        #[arg(long, default_value = "grnn")]
        controller: String,
    },
    /// Paired rollouts of the trained controller against the centralized LQR
    CompareLqr,
    /// Search for a closed-loop stability certificate of the trained controller
    Certify,
    /// Time training across network sizes and fit the growth rate
    Scaling {
        /// Comma-separated node counts
        #[arg(long, value_delimiter = ',', default_values_t = vec![10usize, 20, 40, 80])]
        sizes: Vec<usize>,
    },
}

/// Exit codes are part of the interface: 2 bad input, 3 numerical trouble,
/// 4 a node broke the communication contract.
fn exit_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Io(_) | Error::Serde(_) => 2,
        Error::NumericalFailure(_) => 3,
        Error::LocalityViolation { .. } => 4,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::invalid(format!("could not size the thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Generate => commands::cmd_generate(&cfg, &cli.out),
        Command::Train => commands::cmd_train(&cfg, &cli.out, cli.log_messages),
        Command::Evaluate { controller } => commands::cmd_evaluate(&cfg, &cli.out, controller),
        Command::CompareLqr => commands::cmd_compare_lqr(&cfg, &cli.out),
        Command::Certify => commands::cmd_certify(&cfg, &cli.out),
        Command::Scaling { sizes } => commands::cmd_scaling(&cfg, &cli.out, sizes),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_for(&err))
        }
    }
}
