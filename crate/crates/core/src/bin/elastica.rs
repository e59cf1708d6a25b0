use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use elastica::config::{load_config, RunConfig};
use elastica::runner;

/// Gradient flow for confined elastic curves.
#[derive(Debug, Parser)]
#[command(name = "elastica", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a single flow and write energy.csv, snapshots and summary.json.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a run for several ball radii and write sweep.csv.
    SweepRadius {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        radii: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a run for several penalty scales and fit the penetration slope.
    SweepEpsilon {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        eps: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify the closed curve stored in a snapshot file.
    Classify { snapshot: PathBuf },
}

/// Worker count for sweeps from `ELASTICA_WORKERS` (all cores if unset).
fn workers() -> Result<Option<usize>> {
    match std::env::var("ELASTICA_WORKERS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("invalid ELASTICA_WORKERS `{v}`"))?;
            Ok(Some(n.max(1)))
        }
        Err(_) => Ok(None),
    }
}

fn load(path: &Path, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut config = load_config(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(out) = out {
        config.output_dir = out;
    }
    Ok(config)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out } => {
            let config = load(&config, out)?;
            let outcome = runner::run(&config, &config.output_dir)?;
            let s = &outcome.summary;
            println!(
                "{:?} after {} steps: E_total = {:.10e}, shape = {}, max penetration = {:.3e}",
                s.termination_reason,
                s.steps,
                s.energies.as_ref().map_or(f64::NAN, |e| e.total),
                s.shape.as_deref().unwrap_or("-"),
                s.max_penetration.unwrap_or(f64::NAN)
            );
        }
        Command::SweepRadius { config, radii, out } => {
            let config = load(&config, out)?;
            for row in runner::sweep_radius(&config, &radii, workers()?)? {
                println!("R = {:<10} r_L/R = {:<8.4} normalized energy = {:<8.4} {}", row.radius, row.ratio, row.normalized_energy, row.shape);
            }
        }
        Command::SweepEpsilon { config, eps, out } => {
            let config = load(&config, out)?;
            let sweep = runner::sweep_epsilon(&config, &eps, workers()?)?;
            for row in &sweep.rows {
                println!("eps = {:<10e} max penetration = {:.4e} {}", row.epsilon, row.max_penetration, row.shape);
            }
            match sweep.slope {
                Some(s) => println!("log-log slope: {s:.4}"),
                None => println!("log-log slope: undefined"),
            }
        }
        Command::Classify { snapshot } => {
            let result = runner::classify_snapshot(&snapshot).with_context(|| format!("classifying {}", snapshot.display()))?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
    }
    Ok(())
}
