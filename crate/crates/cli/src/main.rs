mod artifacts;
mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tabguide::exec::Execution;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "tabguide",
    version,
    about = "Guided diffusion for mixed-type tables"
)]
struct Cli {
    /// Run seed; every random choice derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Independent repetitions with derived seeds (impute, constrain).
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true, value_enum)]
    exec: Option<ExecArg>,
    /// Rows per sampling chunk. Does not change results.
    #[arg(long, global = true)]
    chunk_rows: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecArg {
    Sequential,
    Parallel,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with its schema and ground truth.
    Synth(commands::synth::Args),
    /// Train the unconditional denoiser and write a checkpoint.
    Train(commands::train::Args),
    /// Mask a complete table, impute it and score the result.
    Impute(commands::impute::Args),
    /// Sample rows under a hard constraint and report violations.
    Constrain(commands::constrain::Args),
    /// Geometric diagnostics on a synthetic manifold or a checkpoint.
    Diag(commands::diag::Args),
    /// Score existing output files.
    Eval(commands::eval::Args),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    if let Some(e) = cli.exec {
        cfg.execution = match e {
            ExecArg::Sequential => Execution::Sequential,
            ExecArg::Parallel => Execution::Parallel,
        };
    }
    if let Some(c) = cli.chunk_rows {
        cfg.chunk_rows = c;
    }
    match cli.command {
        Command::Synth(a) => commands::synth::run(cfg, a),
        Command::Train(a) => commands::train::run(cfg, a),
        Command::Impute(a) => commands::impute::run(cfg, a),
        Command::Constrain(a) => commands::constrain::run(cfg, a),
        Command::Diag(a) => commands::diag::run(cfg, a),
        Command::Eval(a) => commands::eval::run(cfg, a),
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
