use std::path::Path;

use parereg_core::io::{write_correspondences_csv, write_json, write_ply, write_transform, CorrespondenceRecord};
use serde::Serialize;

use super::ensure_dir;
use crate::config::AppConfig;
use crate::error::{Result, StageExt};
use crate::scene::{gen_scene, SceneSpec};

#[derive(Debug, Serialize)]
pub struct SceneSummary {
    pub seed: u64,
    pub source_points: usize,
    pub target_points: usize,
    pub gt_pairs: usize,
    pub overlap: f64,
    pub spec: SceneSpec,
}

/// Writes `source.ply`, `target.ply`, `transform.json`, `gt_correspondences.csv` and
/// `scene.json` into `out`.
pub fn run_gen(cfg: &AppConfig, seed: u64, out: &Path) -> Result<SceneSummary> {
    let scene = gen_scene(&cfg.scene, seed)?;
    ensure_dir(out)?;
    write_ply(&scene.p, out.join("source.ply")).stage("output")?;
    write_ply(&scene.q, out.join("target.ply")).stage("output")?;
    write_transform(&scene.t_gt, out.join("transform.json")).stage("output")?;
    let records: Vec<CorrespondenceRecord> = scene
        .gt_pairs
        .iter()
        .map(|&(xi, yi)| CorrespondenceRecord { xi, yi, score: 1.0 })
        .collect();
    write_correspondences_csv(&records, out.join("gt_correspondences.csv")).stage("output")?;
    let summary = SceneSummary {
        seed,
        source_points: scene.p.len(),
        target_points: scene.q.len(),
        gt_pairs: scene.gt_pairs.len(),
        overlap: scene.overlap,
        spec: cfg.scene.clone(),
    };
    write_json(&summary, out.join("scene.json")).stage("output")?;
    Ok(summary)
}
