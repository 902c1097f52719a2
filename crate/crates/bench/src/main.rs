use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mlem_bench::experiment::{run_experiment, RunMode};
use mlem_bench::fit::{fit_gamma, pareto_front};
use mlem_bench::output::{best_of_trials, read_results, write_results, ResultRow};
use mlem_bench::tasks::{ddpm_check, train_probs};
use mlem_bench::ExperimentConfig;

#[derive(Parser)]
#[command(name = "mlem-bench", about = "Multilevel Euler-Maruyama experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver blocks of a config as written.
    Run {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Like `run`, filling unset level, scale and shift grids with defaults.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit the scaling exponent from a `cost,error` CSV or a results CSV.
    FitGamma {
        csv: PathBuf,
        #[arg(long)]
        floor: f64,
        /// Method whose rows are used when reading a results CSV.
        #[arg(long, default_value = "em")]
        method: String,
    },
    /// Train a time-dependent schedule and write it to `training.output`.
    TrainProbs { config: PathBuf },
    /// Compare discrete DDPM/DDIM steps with Euler steps of the continuous flows.
    DdpmCheck { config: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output } => run(&config, output, RunMode::Run),
        Command::Sweep { config, output } => run(&config, output, RunMode::Sweep),
        Command::FitGamma { csv, floor, method } => {
            let points = read_points(&csv, &method)?;
            let fit = fit_gamma(&points, floor)?;
            println!("gamma_hat,slope,intercept,r_squared,n_points");
            println!(
                "{},{},{},{},{}",
                fit.gamma_hat, fit.slope, fit.intercept, fit.r_squared, fit.n_points
            );
            Ok(())
        }
        Command::TrainProbs { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = train_probs(&cfg)?;
            for (i, v) in out.trace.iter().enumerate() {
                eprintln!("step {i}: objective {v}");
            }
            print!("{}", out.params.to_kv_string());
            Ok(())
        }
        Command::DdpmCheck { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let stats = ddpm_check(&cfg)?;
            println!("beta,m,ddpm_drift_gap,ddpm_noisy_gap,ddim_gap");
            for s in &stats {
                println!(
                    "{},{},{},{},{}",
                    s.beta, s.m, s.ddpm_drift_gap, s.ddpm_noisy_gap, s.ddim_gap
                );
            }
            for w in stats.windows(2) {
                eprintln!(
                    "beta {} -> {}: ddpm ratio {:.3}, ddim ratio {:.3}",
                    w[0].beta,
                    w[1].beta,
                    w[0].ddpm_drift_gap / w[1].ddpm_drift_gap,
                    w[0].ddim_gap / w[1].ddim_gap
                );
            }
            Ok(())
        }
    }
}

fn run(config: &Path, output: Option<PathBuf>, mode: RunMode) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let rows = run_experiment(&cfg, mode)?;
    match output.or_else(|| cfg.output.clone()) {
        Some(path) => {
            write_results(&rows, &path)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => mlem_bench::output::write_rows(&rows, std::io::stdout().lock())?,
    }
    summarize(&rows);
    Ok(())
}

fn summarize(rows: &[ResultRow]) {
    for b in best_of_trials(rows) {
        eprintln!(
            "{:>5} {:<30} n={:<5} best mse {:.4e} expected cost {:.4e}",
            b.method, b.schedule, b.n_steps, b.mse, b.expected_cost
        );
    }
}

/// `(cost, error)` pairs: columns `cost,error` if present, otherwise the
/// Pareto front of `(expected_cost, sqrt(mse))` over rows of `method`.
fn read_points(path: &Path, method: &str) -> Result<Vec<(f64, f64)>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    if let (Some(c), Some(e)) = (col("cost"), col("error")) {
        return reader
            .records()
            .map(|r| {
                let r = r?;
                Ok((r[c].parse()?, r[e].parse()?))
            })
            .collect();
    }
    let points: Vec<(f64, f64)> = read_results(path)?
        .iter()
        .filter(|r| r.method == method)
        .map(|r| (r.expected_cost, r.mse.sqrt()))
        .collect();
    Ok(pareto_front(&points))
}
