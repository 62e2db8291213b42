//! Experiment runner: reproduces the equilibrium, bias, convergence, and
//! error-decomposition sweeps as CSV from a TOML config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pmlab::config::ExperimentConfig;
use pmlab::experiments;

#[derive(Parser)]
#[command(name = "pmlab", version, about = "Cost-function prediction market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Market-clearing prices vs ground truth, plus sampling-error scalars.
    Clearing(RunArgs),
    /// Market-maker bias vs the first-order formula over the (cost, b) grid.
    BiasSweep(RunArgs),
    /// Mean suboptimality gap and price error per trade, averaged over seeds.
    Simulate(RunArgs),
    /// Empirical strong convexity vs the asymptotic bounds.
    Sigma(RunArgs),
    /// Sampling / bias / convergence error decomposition at trade snapshots.
    Decompose(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path; defaults to the config's `out`, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the belief seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the sweep (0 = one per core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Clearing(a) => ("clearing", a),
        Command::BiasSweep(a) => ("bias-sweep", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Sigma(a) => ("sigma", a),
        Command::Decompose(a) => ("decompose", a),
    };
    match run(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pmlab {name}: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(name: &str, args: &RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    if args.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global()?;
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("cannot read {}: {e}", args.config.display()))?;
    let cfg = ExperimentConfig::from_toml(&text, args.seed)?;

    let csv = match name {
        "clearing" => experiments::cmd_clearing(&cfg)?,
        "bias-sweep" => experiments::cmd_bias_sweep(&cfg)?,
        "simulate" => experiments::cmd_simulate(&cfg)?,
        "sigma" => experiments::cmd_sigma(&cfg)?,
        "decompose" => experiments::cmd_decompose(&cfg)?,
        _ => unreachable!(),
    };

    let out_path = args
        .out
        .clone()
        .or_else(|| cfg.out.clone().map(PathBuf::from));
    match out_path {
        Some(path) => std::fs::write(&path, csv)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}
