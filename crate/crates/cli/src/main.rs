//! `ace`: generate data, train cost networks, sample generalized posteriors
//! and run benchmarks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ace_core::gbi::Method;

#[derive(Parser)]
#[command(name = "ace", version, about = "Amortized cost estimation for generalized Bayesian inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training set, targets and observations.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the cost network on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding `gen-data` output (defaults to the output directory).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Draw posterior samples for every observation.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Inverse temperature; repeat for several. Defaults to the configured list.
        #[arg(long)]
        beta: Vec<f64>,
        /// Use the true cost instead of the network (method `ace` only).
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Restrict to one observation id.
        #[arg(long)]
        obs_id: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the full benchmark and write JSON and CSV reports.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Reuse finished groups from a previous run in the same directory.
        #[arg(long)]
        resume: bool,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: ace_core::Error| e.to_string())
}

pub enum Outcome {
    Success,
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { common } => commands::gen_data(&common),
        Command::Train { common, data } => commands::train(&common, data),
        Command::Sample {
            common,
            method,
            beta,
            oracle,
            net,
            observations,
            obs_id,
            data,
        } => commands::sample(
            &common,
            &commands::SampleArgs {
                method,
                betas: beta,
                oracle,
                net,
                observations,
                obs_id,
                data,
            },
        ),
        Command::Benchmark { common, jobs, resume } => commands::benchmark(&common, jobs, resume),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for invalid input, 4 for numerical failure, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use ace_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArch(_)
                | E::DimensionMismatch { .. }
                | E::Empty(_)
                | E::InvalidConfig(_)
                | E::NoOracle { .. }
                | E::Format(_)
                | E::Json(_) => 2,
                E::NonFinite(_)
                | E::Quadrature(_)
                | E::MaxIterations { .. }
                | E::Initialization(_)
                | E::AcceptanceFloor { .. }
                | E::Degenerate(_) => 4,
                E::Io(_) => 1,
            };
        }
    }
    1
}
