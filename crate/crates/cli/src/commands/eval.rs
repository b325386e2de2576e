use std::collections::BTreeMap;
use std::path::Path;

use parereg_core::io::{read_json, write_json};
use parereg_core::metrics::{aggregate, AggregateMetrics, MetricThresholds, PairMetrics};
use parereg_core::{Point3, RigidTransform};
use serde::{Deserialize, Serialize};

use super::ensure_dir;
use crate::error::{CliError, Result, StageExt};

/// A pair as `[sx, sy, sz, dx, dy, dz]`.
pub type PointPair = [f64; 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    #[serde(flatten)]
    pub transform: RigidTransform,
    /// Predicted correspondences, for the inlier ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondences: Option<Vec<PointPair>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    #[serde(flatten)]
    pub transform: RigidTransform,
    /// Ground-truth correspondences, for the RMSE.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<PointPair>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub pairs: BTreeMap<String, PairMetrics>,
    pub aggregate: AggregateMetrics,
}

fn split(pairs: &[PointPair]) -> (Vec<Point3>, Vec<Point3>) {
    pairs
        .iter()
        .map(|a| (Point3::new(a[0], a[1], a[2]), Point3::new(a[3], a[4], a[5])))
        .unzip()
}

pub fn evaluate(
    predictions: &BTreeMap<String, PredictionEntry>,
    truth: &BTreeMap<String, GroundTruthEntry>,
    th: &MetricThresholds,
) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(CliError::input("ground truth lists no pairs"));
    }
    if let Some(extra) = predictions.keys().find(|k| !truth.contains_key(*k)) {
        return Err(CliError::input(format!("prediction for unknown pair {extra:?}")));
    }
    let mut pairs = BTreeMap::new();
    for (id, gt) in truth {
        let pred = predictions
            .get(id)
            .ok_or_else(|| CliError::input(format!("no prediction for pair {id:?}")))?;
        let corr = pred.correspondences.as_deref().map(split);
        let gtp = gt.pairs.as_deref().map(split);
        let m = PairMetrics::compute(
            &pred.transform,
            &gt.transform,
            corr.as_ref().map(|(s, d)| (s.as_slice(), d.as_slice())),
            gtp.as_ref().map(|(s, d)| (s.as_slice(), d.as_slice())),
            th,
        )
        .map_err(|e| CliError::input(format!("pair {id:?}: {e}")))?;
        pairs.insert(id.clone(), m);
    }
    let aggregate = aggregate(&pairs, th);
    Ok(EvalReport { pairs, aggregate })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `metrics.json` and its per-pair CSV mirror `metrics.csv` into `out`.
pub fn run_eval(predictions: &Path, truth: &Path, th: &MetricThresholds, out: &Path) -> Result<EvalReport> {
    let p: BTreeMap<String, PredictionEntry> = read_json(predictions).stage("predictions")?;
    let t: BTreeMap<String, GroundTruthEntry> = read_json(truth).stage("ground truth")?;
    let report = evaluate(&p, &t, th)?;
    ensure_dir(out)?;
    write_json(&report, out.join("metrics.json")).stage("output")?;
    let mut w = csv::Writer::from_path(out.join("metrics.csv")).map_err(|e| CliError::input(e.to_string()))?;
    let rows = std::iter::once([
        "pair_id".to_string(),
        "ir".into(),
        "rmse".into(),
        "re_deg".into(),
        "te_m".into(),
    ])
    .chain(report.pairs.iter().map(|(id, m)| {
        [
            id.clone(),
            cell(m.ir),
            cell(m.rmse),
            m.re_deg.to_string(),
            m.te_m.to_string(),
        ]
    }));
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::input(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::input(e.to_string()))?;
    Ok(report)
}
