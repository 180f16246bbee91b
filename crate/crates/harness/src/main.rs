use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use harness::report::write_outputs;
use harness::{run_experiment, run_sweep, Experiment, ExperimentConfig, SweepParam};

/// Structure attacks on GNN node classifiers.
///
/// Seeds run concurrently up to ATTACK_WORKERS (default 1).
#[derive(Parser)]
#[command(name = "attack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment over all configured seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the experiment once per value of a parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// budget_fraction, block_size, test_fraction or inner_iterations.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(out: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    out.or_else(|| cfg.output.clone())
        .context("no output directory: pass --out or set `output` in the config")
}

fn summarize(e: &Experiment) {
    let r = &e.report;
    let point = r
        .sweep
        .as_ref()
        .map(|p| format!(" {}={}", p.param, p.value))
        .unwrap_or_default();
    println!(
        "{} {} {} {}{}: clean {:.4} ± {:.4}, perturbed {:.4} ± {:.4} ({} seeds, budget {})",
        r.model,
        r.dataset,
        r.attack,
        r.defense,
        point,
        r.mean_clean_acc,
        r.se_clean_acc,
        r.mean_acc,
        r.se_acc,
        r.runs.len(),
        r.budget
    );
}

fn finish(out: &PathBuf, experiments: &[Experiment]) -> Result<()> {
    write_outputs(out, experiments).with_context(|| format!("writing reports to {}", out.display()))?;
    experiments.iter().for_each(summarize);
    let failures: Vec<&str> = experiments.iter().filter_map(|e| e.report.failure.as_deref()).collect();
    if !failures.is_empty() {
        bail!("some seeds failed: {}", failures.join("; "));
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::read(&config)?;
            let out = out_dir(out, &cfg)?;
            let e = run_experiment(&cfg)?;
            finish(&out, &[e])
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = ExperimentConfig::read(&config)?;
            let out = out_dir(out, &cfg)?;
            let es = run_sweep(&cfg, param, &values)?;
            finish(&out, &es)
        }
    }
}
