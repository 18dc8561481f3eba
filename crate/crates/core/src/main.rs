//! `polsar-despeckle` — the pipeline CLI.
//!
//! Every pipeline stage is a subcommand driven by one JSON manifest (see the
//! [`polsar_despeckle::pipeline`] docs for the schemas). Outputs are files;
//! each stage leaves a `.run.json` reproducibility record next to its
//! primary output. Exit code 0 means every declared output was written.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use polsar_despeckle::pipeline;

#[derive(Parser)]
#[command(
    name = "polsar-despeckle",
    version,
    about = "Deep-learning speckle filtering for dual-polarimetric SAR covariance imagery"
)]
struct Cli {
    /// Worker threads (default: POLSAR_DESPECKLE_THREADS, or 1).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a speckled temporal stack from a scene description.
    Simulate { manifest: PathBuf },
    /// Detect changes over a stack with the omnibus Wishart test.
    Changemask { manifest: PathBuf },
    /// Sample a change-aware noisy/clean patch dataset from a stack.
    Dataset { manifest: PathBuf },
    /// Train the residual denoiser on a patch dataset.
    Train { manifest: PathBuf },
    /// Despeckle a C2 raster with a trained checkpoint.
    Despeckle { manifest: PathBuf },
    /// Compute quality indices (ENL, EPD-ROA, SSIM) over labelled regions.
    Evaluate { manifest: PathBuf },
    /// Render an 8-bit PNG quicklook of a C2 raster.
    Quicklook { input: PathBuf, output: PathBuf },
}

fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("POLSAR_DESPECKLE_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = thread_count(cli.threads);

    let result = match &cli.command {
        Command::Simulate { manifest } => pipeline::cmd_simulate(manifest, threads).map(Some),
        Command::Changemask { manifest } => pipeline::cmd_changemask(manifest, threads).map(Some),
        Command::Dataset { manifest } => pipeline::cmd_dataset(manifest, threads).map(Some),
        Command::Train { manifest } => pipeline::cmd_train(manifest, threads).map(Some),
        Command::Despeckle { manifest } => pipeline::cmd_despeckle(manifest, threads).map(Some),
        Command::Evaluate { manifest } => pipeline::cmd_evaluate(manifest, threads).map(Some),
        Command::Quicklook { input, output } => {
            pipeline::cmd_quicklook(input, output).map(|()| None)
        }
    };

    match result {
        Ok(Some(record)) => {
            log::info!("{}: wrote {} output(s)", record.command, record.outputs.len());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
