//! Command-line entry point tying data generation, training, equivariance
//! auditing, sweeps, and verification suites into reproducible experiments.
//!
//! Exit codes: 0 ok, 2 invalid config, 3 I/O, 4 divergence, 5 checkpoint
//! mismatch, 6 partial sweep failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::SweepAxis;
use relaxconv::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "relaxconv", version, about = "Approximately equivariant dynamics models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset and record its data equivariance error.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the symmetry-breaking magnitude.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Train a model on freshly generated data; writes a checkpoint and a
    /// metrics CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the soft equivariance regularization coefficient.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Measure the equivariance error of a trained checkpoint on a dataset.
    Ee {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate one model per grid point along delta or alpha.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a named verification suite (gradcheck, basis, props, reductions).
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Data(_) | Error::Shape(_) => 2,
        Error::Io(_) | Error::Format(_) => 3,
        Error::NonFinite(_) => 4,
        Error::CheckpointMismatch(_) => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<u8, Error> = match cli.cmd {
        Cmd::GenData {
            config,
            out,
            seed,
            delta,
        } => commands::cmd_gen_data(&config, &out, seed, delta).map(|_| 0),
        Cmd::Train {
            config,
            out,
            seed,
            alpha,
        } => commands::cmd_train(&config, &out, seed, alpha).map(|_| 0),
        Cmd::Ee {
            checkpoint,
            dataset,
            out,
        } => commands::cmd_ee(&checkpoint, &dataset, out.as_deref()).map(|_| 0),
        Cmd::Sweep {
            config,
            axis,
            out,
            seed,
        } => SweepAxis::parse(&axis)
            .and_then(|axis| commands::cmd_sweep(&config, axis, &out, seed))
            .map(|code| code as u8),
        Cmd::Verify { suite, seed } => commands::cmd_verify(&suite, seed).map(|report| {
            print!("{}", report.render());
            u8::from(!report.passed())
        }),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
