use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use flexduplex::summary::{emit_summary, DEFAULT_TAIL_FRACTION};
use flexduplex::sweep::run_sweep;
use flexduplex::trace::write_trace;
use flexduplex::{Experiment, SimConfig};

#[derive(Debug, Parser)]
#[command(
    name = "flexduplex",
    version,
    about = "Learning flexible-duplex spectrum-sharing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path (trace CSV, or the sweep table for `sweep`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Also write per-transmitter and per-slot rows to the trace
    #[arg(long, global = true)]
    slots: bool,

    /// Number of replications for `sweep`
    #[arg(long, global = true, default_value_t = 10)]
    replications: u64,

    /// Account cycle latency with the on-chip server timing
    #[arg(long, global = true)]
    optimized_timing: bool,

    /// Fraction of measured epochs averaged for the tail-mean ASE
    #[arg(long, global = true, default_value_t = DEFAULT_TAIL_FRACTION)]
    tail_fraction: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the learning system (warm-up, then measured epochs)
    Simulate,
    /// Run the fixed-threshold system at the initial threshold
    Baseline,
    /// Run both on the same seed and topology and compare them
    Compare,
    /// Run independent paired replications in parallel
    Sweep,
}

fn load(cli: &Cli) -> anyhow::Result<SimConfig> {
    let mut cfg = match &cli.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.optimized_timing {
        cfg.optimized_timing = true;
    }
    anyhow::ensure!(
        cli.tail_fraction > 0.0 && cli.tail_fraction <= 1.0,
        "--tail-fraction must lie in (0, 1], got {}",
        cli.tail_fraction
    );
    Ok(cfg)
}

fn baseline_path(out: &Path) -> PathBuf {
    out.with_extension("baseline.csv")
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load(&cli)?;
    match cli.command {
        Command::Simulate | Command::Baseline | Command::Compare => {
            let exp = Experiment::new(cfg)?.keep_slots(cli.slots);
            let (primary, baseline) = match cli.command {
                Command::Simulate => (exp.run_learning()?, None),
                Command::Baseline => (exp.run_baseline()?, None),
                _ => (exp.run_learning()?, Some(exp.run_baseline()?)),
            };
            if let Some(out) = &cli.out {
                write_trace(&primary, out, cli.slots)?;
                if let Some(b) = &baseline {
                    write_trace(b, &baseline_path(out), cli.slots)?;
                }
            }
            print!(
                "{}",
                emit_summary(&primary, baseline.as_ref(), cli.tail_fraction)?
            );
        }
        Command::Sweep => {
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("sweep.csv"));
            let rows = run_sweep(&cfg, cli.replications, cli.tail_fraction, &out)
                .with_context(|| format!("sweep of {} replications", cli.replications))?;
            let n = rows.len().max(1) as f64;
            let wins = rows
                .iter()
                .filter(|r| r.learning_tail_ase > r.baseline_tail_ase)
                .count();
            let mean_ratio = rows.iter().map(|r| r.ratio).sum::<f64>() / n;
            println!("replications: {}", rows.len());
            println!("learning beats baseline: {wins}/{}", rows.len());
            println!("mean ASE ratio learning/baseline: {mean_ratio:.4}");
            println!("table written to {}", out.display());
        }
    }
    Ok(())
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
