use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use parereg::commands::{
    init_weights, inspect_weights, run_benchmark, run_eval, run_gen, run_register, write_benchmark_csv, write_register,
    InputSource, RegisterOptions,
};
use parereg::{AppConfig, CliError, Result};
use parereg_core::estimator::EstimatorKind;

#[derive(Parser)]
#[command(name = "parereg", version, about = "Rotation-equivariant point cloud registration")]
struct Cli {
    /// JSON configuration; omitted fields take the preset defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "parereg-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pair with known ground truth.
    Gen,
    /// Register a pair (files, or a generated scene when no files are given).
    Register {
        #[arg(long, requires = "target")]
        source: Option<PathBuf>,
        #[arg(long, requires = "source")]
        target: Option<PathBuf>,
        /// Ground-truth transform JSON for metrics on file inputs.
        #[arg(long, requires = "source")]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = "feature")]
        estimator: EstimatorKind,
        #[arg(long)]
        budget: Option<usize>,
        /// Oracle features instead of the network.
        #[arg(long, conflicts_with_all = ["source", "weights"])]
        oracle: bool,
        /// Rerun on a rigidly moved source and verify equivariance and invariance.
        #[arg(long, conflicts_with = "oracle")]
        check: bool,
        /// Also write the aligned source as `aligned.ply`.
        #[arg(long)]
        aligned: bool,
    },
    /// Estimator comparison on oracle-feature scenes.
    Benchmark {
        #[arg(long, value_delimiter = ',')]
        estimator: Vec<EstimatorKind>,
        #[arg(long, value_delimiter = ',')]
        budget: Vec<usize>,
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Metrics of stored predictions against ground truth.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
    },
    /// Weight container utilities.
    Weights {
        #[command(subcommand)]
        action: WeightsAction,
    },
}

#[derive(Subcommand)]
enum WeightsAction {
    /// Random weights for the configured model.
    Init,
    /// Check a container against the config and re-save it into `--out`.
    Inspect {
        #[arg(long)]
        weights: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = AppConfig::load(cli.config.as_deref())?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Gen => {
            let s = run_gen(&cfg, cli.seed, out)?;
            println!(
                "scene: {} / {} points, overlap {:.3}",
                s.source_points, s.target_points, s.overlap
            );
        }
        Command::Register {
            source,
            target,
            ground_truth,
            weights,
            estimator,
            budget,
            oracle,
            check,
            aligned,
        } => {
            if budget.is_some() {
                cfg.estimator.budget = budget;
                cfg.validate()?;
            }
            let input = match (source, target) {
                (Some(source), Some(target)) => InputSource::Files {
                    source,
                    target,
                    ground_truth,
                },
                _ => InputSource::Scene,
            };
            let opts = RegisterOptions {
                input,
                weights,
                estimator,
                oracle,
                check,
                aligned,
            };
            let report = run_register(&cfg, &opts, cli.seed)?;
            write_register(&report, out)?;
            for (id, p) in &report.pairs {
                let m = p
                    .metrics
                    .map(|m| format!(", RE {:.4} deg, TE {:.4} m", m.re_deg, m.te_m));
                println!("{id}: {} inliers{}", p.hypothesis.inlier_count, m.unwrap_or_default());
            }
            if !report.checks_pass() {
                log::warn!("invariance checks failed; see report.json");
            }
        }
        Command::Benchmark {
            estimator,
            budget,
            pairs,
        } => {
            if !estimator.is_empty() {
                cfg.benchmark.estimators = estimator;
            }
            if !budget.is_empty() {
                cfg.benchmark.budgets = budget;
            }
            if let Some(n) = pairs {
                cfg.benchmark.pairs = n;
            }
            let rows = run_benchmark(&cfg, cli.seed)?;
            write_benchmark_csv(&rows, out)?;
            for r in &rows {
                println!(
                    "{:<8} budget {:>5}: success {:.3}",
                    r.estimator.to_string(),
                    r.budget,
                    r.success
                );
            }
        }
        Command::Eval {
            predictions,
            ground_truth,
        } => {
            let r = run_eval(&predictions, &ground_truth, &cfg.metrics, out)?;
            println!(
                "{}",
                serde_json::to_string(&r.aggregate).map_err(|e| CliError::input(e.to_string()))?
            );
        }
        Command::Weights { action } => {
            let layout = match action {
                WeightsAction::Init => init_weights(&cfg, cli.seed, out)?,
                WeightsAction::Inspect { weights } => inspect_weights(&cfg, &weights, Some(out))?,
            };
            println!("{} tensors, {} parameters", layout.tensors.len(), layout.parameters);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
