//! `tsr` — rasterize, refine, and score time-space traffic speed diagrams.

use std::process::ExitCode;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use tsr_cli::commands::{self, EvaluateArgs, ExperimentArgs, PerturbArgs, RasterizeArgs, RefineArgs, SweepArgs, SynthArgs};

#[derive(Parser)]
#[command(name = "tsr", version, about = "Refine low-resolution time-space traffic speed diagrams")]
struct Cli {
    /// Worker threads for parallel stages (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grid trajectory points into a speed diagram.
    Rasterize(RasterizeArgs),
    /// Generate a synthetic shockwave diagram.
    Synth(SynthArgs),
    /// Upscale a diagram with one of the refinement methods.
    Refine(RefineArgs),
    /// Score a refined diagram against ground truth.
    Evaluate(EvaluateArgs),
    /// Add noise or missing cells to a diagram.
    Perturb(PerturbArgs),
    /// Run every (test, method, factor) row of a config and tabulate results.
    Experiment(ExperimentArgs),
    /// Re-run one experiment axis over a range of values.
    Sweep(SweepArgs),
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.cmd {
        Cmd::Rasterize(a) => commands::rasterize(a),
        Cmd::Synth(a) => commands::synth(a),
        Cmd::Refine(a) => commands::refine(a),
        Cmd::Evaluate(a) => commands::evaluate(a),
        Cmd::Perturb(a) => commands::perturb_cmd(a),
        Cmd::Experiment(a) => commands::experiment(a),
        Cmd::Sweep(a) => commands::sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap renders help to stdout and errors to stderr on its own.
            e.print().expect("writing clap output");
            return ExitCode::from(code);
        }
    };
    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
            eprintln!("error: setting worker count: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
