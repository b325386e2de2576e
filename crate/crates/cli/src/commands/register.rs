use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use parereg_core::estimator::EstimatorKind;
use parereg_core::estimator::{estimate, CorrespondenceSet, Hypothesis};
use parereg_core::geom::{apply_transform, random_rotation};
use parereg_core::io::{
    read_cloud, read_transform, write_correspondences_csv, write_hypothesis, write_json, write_ply,
    CorrespondenceRecord,
};
use parereg_core::matching::{match_pyramids, MatchingOutput};
use parereg_core::metrics::PairMetrics;
use parereg_core::pareconv::{FeaturePyramid, Pyramid};
use parereg_core::pipeline::{build_pyramids, correspondences_from_matches, Model};
use parereg_core::{Point3, PointCloud, RigidTransform, VectorFeature};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ensure_dir, load_model};
use crate::config::AppConfig;
use crate::derive_seed;
use crate::error::{CliError, Result, StageExt};
use crate::scene::{gen_scene, oracle_correspondences};

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    /// A synthetic pair generated from the config and seed.
    Scene,
    Files {
        source: PathBuf,
        target: PathBuf,
        ground_truth: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisterOptions {
    pub input: InputSource,
    pub weights: Option<PathBuf>,
    pub estimator: EstimatorKind,
    /// Replace the network by oracle features (generated scenes only).
    pub oracle: bool,
    /// Re-run the network on a rigidly moved source and compare.
    pub check: bool,
    pub aligned: bool,
}

impl Default for RegisterOptions {
    fn default() -> Self {
        Self {
            input: InputSource::Scene,
            weights: None,
            estimator: EstimatorKind::Feature,
            oracle: false,
            check: false,
            aligned: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct Timing {
    pub backbone_ms: f64,
    pub coarse_matching_ms: f64,
    pub hypothesis_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckResult {
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(value: f64, tolerance: f64) -> Self {
        Self {
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub source_points: usize,
    pub target_points: usize,
    pub correspondences: usize,
    pub hypothesis: Hypothesis,
    pub ground_truth: Option<RigidTransform>,
    pub metrics: Option<PairMetrics>,
    pub success: Option<bool>,
}

/// Everything but `timing`, `aligned` and `records` is serialised into `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: String,
    pub estimator: EstimatorKind,
    pub seed: u64,
    pub pairs: BTreeMap<String, PairReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<BTreeMap<String, CheckResult>>,
    #[serde(skip)]
    pub timing: BTreeMap<String, Timing>,
    #[serde(skip)]
    pub aligned: Option<PointCloud>,
    #[serde(skip)]
    pub records: Vec<CorrespondenceRecord>,
}

impl RunReport {
    pub fn checks_pass(&self) -> bool {
        self.checks.as_ref().is_none_or(|c| c.values().all(|r| r.pass))
    }
}

struct Inputs {
    id: String,
    p: PointCloud,
    q: PointCloud,
    t_gt: Option<RigidTransform>,
    gt_pairs: Option<(Vec<Point3>, Vec<Point3>)>,
    scene: Option<crate::scene::Scene>,
}

fn load_inputs(cfg: &AppConfig, input: &InputSource, seed: u64) -> Result<Inputs> {
    match input {
        InputSource::Scene => {
            let s = gen_scene(&cfg.scene, seed)?;
            let (a, b) = s.gt_pairs.iter().map(|&(i, j)| (s.p[i], s.q[j])).unzip();
            Ok(Inputs {
                id: "scene".into(),
                p: s.p.clone(),
                q: s.q.clone(),
                t_gt: Some(s.t_gt),
                gt_pairs: Some((a, b)),
                scene: Some(s),
            })
        }
        InputSource::Files {
            source,
            target,
            ground_truth,
        } => Ok(Inputs {
            id: source
                .file_stem()
                .map_or_else(|| "pair".into(), |s| s.to_string_lossy().into_owned()),
            p: read_cloud(source).stage("input")?,
            q: read_cloud(target).stage("input")?,
            t_gt: ground_truth.as_ref().map(read_transform).transpose().stage("input")?,
            gt_pairs: None,
            scene: None,
        }),
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn relative_equivariance(moved: &[VectorFeature<f64>], base: &[VectorFeature<f64>], motion: &RigidTransform) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in moved.iter().zip(base) {
        num += (a.as_matrix() - b.rotated(&motion.r).as_matrix()).norm_squared();
        den += b.as_matrix().norm_squared();
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

fn relative_difference(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn flat_descriptors(f: &FeaturePyramid<f64>) -> Vec<f64> {
    f.superpoint_descriptors
        .iter()
        .chain(&f.point_descriptors)
        .flat_map(|d| d.as_slice().to_vec())
        .collect()
}

const CHECK_TOLERANCE: f64 = 1e-9;

/// Equivariance of features, invariance of descriptors and index-level match equality under
/// a random rigid motion of the source.
fn invariance_checks(
    model: &Model<f64>,
    pyramid: &Pyramid,
    fp: &FeaturePyramid<f64>,
    fq: &FeaturePyramid<f64>,
    out: &MatchingOutput<f64>,
    seed: u64,
) -> Result<BTreeMap<String, CheckResult>> {
    let motion = RigidTransform::new(random_rotation(seed), Vector3::new(0.3, -0.2, 0.5));
    let moved = pyramid.transformed(&motion).stage("check")?;
    let fm = model.features(&moved).stage("check")?;
    let om = match_pyramids(&model.matching, &fm, fq).stage("check")?;
    let coarse = |o: &MatchingOutput<f64>| o.coarse.iter().map(|m| (m.x, m.y)).collect::<Vec<_>>();
    let fine = |o: &MatchingOutput<f64>| o.fine.iter().map(|m| (m.x, m.y, m.patch)).collect::<Vec<_>>();
    let scores = |o: &MatchingOutput<f64>| o.fine.iter().map(|m| m.score).collect::<Vec<_>>();
    let mismatch = |a: bool| if a { 0.0 } else { 1.0 };
    let mut c = BTreeMap::new();
    c.insert(
        "point_equivariance".into(),
        CheckResult::new(
            relative_equivariance(&fm.point_features, &fp.point_features, &motion),
            CHECK_TOLERANCE,
        ),
    );
    c.insert(
        "superpoint_equivariance".into(),
        CheckResult::new(
            relative_equivariance(&fm.superpoint_features, &fp.superpoint_features, &motion),
            CHECK_TOLERANCE,
        ),
    );
    c.insert(
        "descriptor_invariance".into(),
        CheckResult::new(
            relative_difference(&flat_descriptors(&fm), &flat_descriptors(fp)),
            CHECK_TOLERANCE,
        ),
    );
    c.insert(
        "coarse_match_indices".into(),
        CheckResult::new(mismatch(coarse(&om) == coarse(out)), 0.0),
    );
    c.insert(
        "fine_match_indices".into(),
        CheckResult::new(mismatch(fine(&om) == fine(out)), 0.0),
    );
    let same_len = scores(&om).len() == scores(out).len();
    c.insert(
        "fine_match_scores".into(),
        CheckResult::new(
            if same_len {
                relative_difference(&scores(&om), &scores(out))
            } else {
                f64::INFINITY
            },
            CHECK_TOLERANCE,
        ),
    );
    Ok(c)
}

/// Full pipeline on one pair: network (or oracle) correspondences, the chosen estimator with
/// refinement, and metrics when the ground truth is known.
pub fn run_register(cfg: &AppConfig, opts: &RegisterOptions, seed: u64) -> Result<RunReport> {
    let start = Instant::now();
    let inputs = load_inputs(cfg, &opts.input, seed)?;
    let mut timing = Timing::default();
    let mut checks = None;
    let (corrs, records): (CorrespondenceSet, Vec<CorrespondenceRecord>) = if opts.oracle {
        let scene = inputs
            .scene
            .as_ref()
            .ok_or_else(|| CliError::input("oracle mode needs a generated scene, not input files"))?;
        let o = oracle_correspondences(scene, &cfg.oracle, derive_seed(seed, 2))?;
        let records = o
            .indices
            .iter()
            .map(|&(xi, yi)| CorrespondenceRecord { xi, yi, score: 1.0 })
            .collect();
        (o.set, records)
    } else {
        let model = match &opts.weights {
            Some(path) => load_model(cfg, path)?,
            None => Model::<f64>::random(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)), &cfg.model)
                .stage("weights")?,
        };
        let t = Instant::now();
        let (pp, pq) = build_pyramids(&inputs.p, &inputs.q, &cfg.model.backbone).stage("backbone")?;
        let (fp, fq) = rayon::join(|| model.features(&pp), || model.features(&pq));
        let (fp, fq) = (fp.stage("backbone")?, fq.stage("backbone")?);
        timing.backbone_ms = ms(t);
        let t = Instant::now();
        let out = match_pyramids(&model.matching, &fp, &fq).stage("matching")?;
        timing.coarse_matching_ms = ms(t);
        if opts.check {
            checks = Some(invariance_checks(&model, &pp, &fp, &fq, &out, derive_seed(seed, 4))?);
        }
        let corrs = correspondences_from_matches(&out.fine, &fp, &fq).stage("matching")?;
        (corrs, out.fine.iter().map(CorrespondenceRecord::from).collect())
    };
    let t = Instant::now();
    let h = estimate(&corrs, &cfg.estimator, opts.estimator, derive_seed(seed, 3)).stage("estimator")?;
    timing.hypothesis_ms = ms(t);
    let metrics = inputs
        .t_gt
        .map(|t_gt| {
            PairMetrics::compute(
                &h.transform,
                &t_gt,
                Some((&corrs.src, &corrs.dst)),
                inputs.gt_pairs.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())),
                &cfg.metrics,
            )
        })
        .transpose()
        .stage("metrics")?;
    timing.total_ms = ms(start);
    let pair = PairReport {
        source_points: inputs.p.len(),
        target_points: inputs.q.len(),
        correspondences: corrs.len(),
        hypothesis: h,
        ground_truth: inputs.t_gt,
        success: metrics.map(|m| m.success(&cfg.metrics)),
        metrics,
    };
    Ok(RunReport {
        mode: if opts.oracle { "oracle" } else { "network" }.into(),
        estimator: opts.estimator,
        seed,
        pairs: BTreeMap::from([(inputs.id.clone(), pair)]),
        checks,
        timing: BTreeMap::from([(inputs.id, timing)]),
        aligned: opts.aligned.then(|| apply_transform(&inputs.p, &h.transform)),
        records,
    })
}

/// `report.json`, `timing.json`, `hypothesis.json`, `correspondences.csv` and, when requested,
/// `aligned.ply`.
pub fn write_register(report: &RunReport, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    write_json(report, out.join("report.json")).stage("output")?;
    write_json(&report.timing, out.join("timing.json")).stage("output")?;
    if let Some(pair) = report.pairs.values().next() {
        write_hypothesis(&pair.hypothesis, out.join("hypothesis.json")).stage("output")?;
    }
    write_correspondences_csv(&report.records, out.join("correspondences.csv")).stage("output")?;
    if let Some(cloud) = &report.aligned {
        write_ply(cloud, out.join("aligned.ply")).stage("output")?;
    }
    Ok(())
}
