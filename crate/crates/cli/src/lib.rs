//! Pipeline behind the `mhmm` binary.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Bad arguments, configuration or missing inputs.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser, Debug)]
#[command(name = "mhmm", version, about = "Mixed Poisson hidden Markov models for weekly loan counts")]
#[command(after_help = "Any configuration key can be overridden with --<block>.<key> <value>, e.g. --mcmc.chains 2.")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for simulation and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Simulate a panel; writes panel.csv and truth.json.
    Simulate,
    /// Sample the posterior; writes samples.csv and summary.json.
    Fit {
        /// Also fit the mixed-effects Poisson baseline.
        #[arg(long)]
        baseline: bool,
    },
    /// Viterbi paths at posterior medians; writes states.csv.
    Decode,
    /// Apply the default policy to states.csv; writes policy.json.
    Policy,
    /// One-step-ahead MAE/MSE of both models; writes metrics.csv.
    Evaluate,
    /// Bundle summary, policy and metrics into report.json.
    Report,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|cause| {
        cause.downcast_ref::<UsageError>().is_some()
            || cause.downcast_ref::<mhmm::Error>().is_some_and(mhmm::Error::is_validation)
    });
    if validation {
        2
    } else {
        1
    }
}

fn dispatch(cli: &Cli, overrides: &[(String, String)]) -> anyhow::Result<()> {
    let config = config::load(cli.config.as_deref(), overrides, cli.seed)?;
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match cli.command {
        Command::Simulate => commands::simulate(&config),
        Command::Fit { baseline } => commands::fit(&config, baseline),
        Command::Decode => commands::decode(&config),
        Command::Policy => commands::policy(&config),
        Command::Evaluate => commands::evaluate(&config),
        Command::Report => commands::report(&config),
    }
}

/// Parses `args` (program name first), runs the command and maps failures
/// to exit status 2 (usage or validation) or 1 (runtime).
pub fn run<I: IntoIterator<Item = String>>(args: I) -> ExitCode {
    let (args, overrides) = match config::extract_overrides(args.into_iter().collect()) {
        Ok(split) => split,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
