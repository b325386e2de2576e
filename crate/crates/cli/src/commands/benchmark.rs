use std::path::Path;
use std::time::Instant;

use parereg_core::estimator::{estimate, EstimatorConfig, EstimatorKind};
use parereg_core::metrics::{rotation_error, translation_error};
use rayon::prelude::*;
use serde::Serialize;

use super::ensure_dir;
use crate::config::AppConfig;
use crate::derive_seed;
use crate::error::{CliError, Result};
use crate::scene::{gen_scene, oracle_correspondences, OracleCorrespondences, Scene};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub estimator: EstimatorKind,
    pub budget: usize,
    pub success: f64,
    /// Over successful pairs, degrees.
    pub mean_re: Option<f64>,
    /// Over successful pairs, metres.
    pub mean_te: Option<f64>,
    /// Mean wall time per pair.
    pub ms: f64,
}

/// `(RE degrees, TE metres)`, or `None` when the estimator produced nothing.
fn solve(
    pair: &(Scene, OracleCorrespondences),
    cfg: &EstimatorConfig,
    kind: EstimatorKind,
    seed: u64,
) -> Option<(f64, f64)> {
    let (scene, oracle) = pair;
    estimate(&oracle.set, cfg, kind, seed).ok().map(|h| {
        (
            rotation_error(&h.transform.r, &scene.t_gt.r),
            translation_error(&h.transform.t, &scene.t_gt.t),
        )
    })
}

/// One row per `(estimator, budget)` on `cfg.benchmark.pairs` oracle-feature scenes.
pub fn run_benchmark(cfg: &AppConfig, seed: u64) -> Result<Vec<BenchmarkRow>> {
    let b = &cfg.benchmark;
    if b.estimators.is_empty() {
        return Err(CliError::input("benchmark: empty estimator list"));
    }
    if b.budgets.is_empty() || b.budgets.contains(&0) {
        return Err(CliError::input(
            "benchmark: budgets must be a non-empty list of positive counts",
        ));
    }
    if b.pairs == 0 {
        return Err(CliError::input("benchmark: pair count must be positive"));
    }
    let pairs: Vec<(Scene, OracleCorrespondences)> = (0..b.pairs as u64)
        .into_par_iter()
        .map(|i| {
            let scene = gen_scene(&cfg.scene, derive_seed(seed, 2 * i))?;
            let oracle = oracle_correspondences(&scene, &cfg.oracle, derive_seed(seed, 2 * i + 1))?;
            Ok((scene, oracle))
        })
        .collect::<Result<_>>()?;
    let th = &cfg.metrics;
    let mut rows = Vec::new();
    for &kind in &b.estimators {
        for &budget in &b.budgets {
            let est = EstimatorConfig {
                budget: Some(budget),
                ..cfg.estimator.clone()
            };
            let runs: Vec<(Option<(f64, f64)>, f64)> = pairs
                .par_iter()
                .enumerate()
                .map(|(i, pair)| {
                    let start = Instant::now();
                    let r = solve(pair, &est, kind, derive_seed(seed, 1 << 32 | i as u64));
                    (r, start.elapsed().as_secs_f64() * 1e3)
                })
                .collect();
            let ok: Vec<(f64, f64)> = runs
                .iter()
                .filter_map(|(r, _)| *r)
                .filter(|&(re, te)| re < th.re_deg && te < th.te_m)
                .collect();
            let mean =
                |f: fn(&(f64, f64)) -> f64| (!ok.is_empty()).then(|| ok.iter().map(f).sum::<f64>() / ok.len() as f64);
            rows.push(BenchmarkRow {
                estimator: kind,
                budget,
                success: ok.len() as f64 / pairs.len() as f64,
                mean_re: mean(|e| e.0),
                mean_te: mean(|e| e.1),
                ms: runs.iter().map(|r| r.1).sum::<f64>() / runs.len() as f64,
            });
            log::info!("{kind} budget {budget}: success {:.3}", rows.last().unwrap().success);
        }
    }
    Ok(rows)
}

/// `out/benchmark.csv` with columns `estimator,budget,success,mean_re,mean_te,ms`.
pub fn write_benchmark_csv(rows: &[BenchmarkRow], out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let path = out.join("benchmark.csv");
    let err = |e: csv::Error| CliError::input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}
