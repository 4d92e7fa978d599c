//! `peakforge` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use peakforge_cli::commands;
use peakforge_cli::config::{
    resolve_workers, CalibrateArgs, ConfigFile, DetectArgs, EvalArgs, ReportArgs, SynthArgs,
};

#[derive(Parser)]
#[command(
    name = "peakforge",
    version,
    about = "Probabilistic lesion detection from heatmaps"
)]
struct Cli {
    /// TOML file with per-subcommand defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads [default: available parallelism]; PEAKFORGE_THREADS overrides.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes: one MVOL volume and one ground-truth JSON each.
    Synth(SynthArgs),
    /// Detect lesions in MVOL volumes.
    Detect(DetectArgs),
    /// Score detections against scenes: metrics, calibration and retention.
    Eval(EvalArgs),
    /// Recompute only the calibration curve.
    Calibrate(CalibrateArgs),
    /// Merge several eval outputs.
    Report(ReportArgs),
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let workers = resolve_workers(cli.workers, file.workers)?;
    // resolve (and validate) before the pool starts or any file is written
    match cli.command {
        Command::Synth(a) => {
            let p = a.layered(file.synth).resolve()?;
            commands::synth(&p, &commands::thread_pool(workers)?)
        }
        Command::Detect(a) => {
            let p = a.layered(file.detect).resolve()?;
            commands::detect(&p, &commands::thread_pool(workers)?)
        }
        Command::Eval(a) => {
            let p = a.layered(file.eval).resolve()?;
            commands::eval(&p, &commands::thread_pool(workers)?)
        }
        Command::Calibrate(a) => {
            let p = a.layered(file.calibrate).resolve()?;
            commands::calibrate(&p, &commands::thread_pool(workers)?)
        }
        Command::Report(a) => {
            let p = a.layered(file.report).resolve()?;
            commands::report(&p, &commands::thread_pool(workers)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
