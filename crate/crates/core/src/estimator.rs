//! Closed-form Procrustes, the correspondence-wise hypothesis proposer, iterative
//! refinement on inliers, patch-wise LGR and a RANSAC baseline.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::kabsch_rotation;
use crate::{Error, Point3, Result, RigidTransform, Rotation, VectorFeature};

/// Matched point pairs with optional weights, equivariant feature pairs and patch ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub src: Vec<Point3>,
    pub dst: Vec<Point3>,
    pub weights: Option<Vec<f64>>,
    pub features: Option<Vec<(VectorFeature<f64>, VectorFeature<f64>)>>,
    /// Superpoint-pair id of each correspondence, used by LGR.
    pub patches: Option<Vec<usize>>,
}

impl CorrespondenceSet {
    pub fn new(src: Vec<Point3>, dst: Vec<Point3>) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::dims("correspondence targets", src.len(), dst.len()));
        }
        if src.is_empty() {
            return Err(Error::NoCorrespondences);
        }
        if src.iter().chain(&dst).any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidArgument("non-finite correspondence coordinate".into()));
        }
        Ok(Self {
            src,
            dst,
            ..Self::default()
        })
    }

    pub fn with_weights(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.len() {
            return Err(Error::dims("correspondence weights", self.len(), w.len()));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        self.weights = Some(w);
        Ok(self)
    }

    pub fn with_features(mut self, f: Vec<(VectorFeature<f64>, VectorFeature<f64>)>) -> Result<Self> {
        if f.len() != self.len() {
            return Err(Error::dims("correspondence features", self.len(), f.len()));
        }
        self.features = Some(f);
        Ok(self)
    }

    pub fn with_patches(mut self, p: Vec<usize>) -> Result<Self> {
        if p.len() != self.len() {
            return Err(Error::dims("correspondence patches", self.len(), p.len()));
        }
        self.patches = Some(p);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &Vec<_>| idx.iter().map(|&i| v[i]).collect();
        Self {
            src: pick(&self.src),
            dst: pick(&self.dst),
            weights: self.weights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
            features: self
                .features
                .as_ref()
                .map(|f| idx.iter().map(|&i| f[i].clone()).collect()),
            patches: self.patches.as_ref().map(|p| idx.iter().map(|&i| p[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypothesisSource {
    Feature,
    Ransac,
    Lgr,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    #[serde(flatten)]
    pub transform: RigidTransform,
    #[serde(rename = "inliers")]
    pub inlier_count: usize,
    pub source: HypothesisSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Feature,
    Ransac,
    Lgr,
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(Self::Feature),
            "ransac" => Ok(Self::Ransac),
            "lgr" => Ok(Self::Lgr),
            _ => Err(Error::InvalidArgument(format!(
                "unknown estimator {s:?} (feature|ransac|lgr)"
            ))),
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Feature => "feature",
            Self::Ransac => "ransac",
            Self::Lgr => "lgr",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// `tau_d`, metres.
    pub acceptance_radius: f64,
    pub refine_iterations: usize,
    pub ransac_sample: usize,
    /// Maximum hypotheses per estimator; `None` means one per correspondence (feature),
    /// one per patch (LGR) or 1000 iterations (RANSAC).
    pub budget: Option<usize>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::indoor()
    }
}

impl EstimatorConfig {
    pub const DEFAULT_RANSAC_ITERATIONS: usize = 1000;

    pub fn indoor() -> Self {
        Self {
            acceptance_radius: 0.1,
            refine_iterations: 5,
            ransac_sample: 3,
            budget: None,
        }
    }

    pub fn outdoor() -> Self {
        Self {
            acceptance_radius: 0.6,
            ..Self::indoor()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.acceptance_radius > 0.0 && self.acceptance_radius.is_finite()) {
            return Err(Error::InvalidArgument("acceptance radius must be positive".into()));
        }
        if self.ransac_sample < 3 {
            return Err(Error::InvalidArgument("ransac sample size must be at least 3".into()));
        }
        if self.budget == Some(0) {
            return Err(Error::InvalidArgument("hypothesis budget must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted least-squares rigid motion `argmin sum_i w_i |R s_i + t - d_i|^2`.
pub fn procrustes(src: &[Point3], dst: &[Point3], weights: Option<&[f64]>) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::dims("procrustes targets", src.len(), dst.len()));
    }
    if let Some(w) = weights {
        if w.len() != src.len() {
            return Err(Error::dims("procrustes weights", src.len(), w.len()));
        }
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..src.len()).map(w).sum();
    if src.len() < 3 || !(total > 0.0) {
        return Err(Error::DegenerateConfiguration);
    }
    let cs = (0..src.len()).map(|i| src[i] * w(i)).sum::<Point3>() / total;
    let cd = (0..dst.len()).map(|i| dst[i] * w(i)).sum::<Point3>() / total;
    let h: Matrix3<f64> = (0..src.len())
        .map(|i| (src[i] - cs) * (dst[i] - cd).transpose() * w(i))
        .sum();
    let r = kabsch_rotation(&h).ok_or(Error::DegenerateConfiguration)?;
    Ok(RigidTransform::new(r, cd - r.rotate(&cs)))
}

/// Rotation best mapping the channels of `f_p` onto those of `f_q`:
/// `H = sum_c f_p,c f_q,c^T = U S V^T`, `R = V diag(1, 1, det(V U^T)) U^T`.
pub fn fit_rotation_from_features(f_p: &VectorFeature<f64>, f_q: &VectorFeature<f64>) -> Result<Rotation> {
    if f_p.channels() != f_q.channels() {
        return Err(Error::dims("feature channels", f_p.channels(), f_q.channels()));
    }
    let h = f_p.as_matrix().transpose() * f_q.as_matrix();
    let h = Matrix3::from_fn(|i, j| h[(i, j)]);
    kabsch_rotation(&h).ok_or(Error::UnderdeterminedRotation)
}

/// `R` from the feature pair and `t = q - R p`.
pub fn transform_from_correspondence(
    p: &Point3,
    q: &Point3,
    f_p: &VectorFeature<f64>,
    f_q: &VectorFeature<f64>,
) -> Result<RigidTransform> {
    let r = fit_rotation_from_features(f_p, f_q)?;
    Ok(RigidTransform::new(r, q - r.rotate(p)))
}

/// Per-correspondence residual test `|R p + t - q| < tau`.
pub fn inlier_mask(t: &RigidTransform, corrs: &CorrespondenceSet, tau: f64) -> Vec<bool> {
    corrs
        .src
        .iter()
        .zip(&corrs.dst)
        .map(|(p, q)| (t.apply(p) - q).norm() < tau)
        .collect()
}

pub fn count_inliers(t: &RigidTransform, corrs: &CorrespondenceSet, tau: f64) -> usize {
    corrs
        .src
        .iter()
        .zip(&corrs.dst)
        .filter(|(p, q)| (t.apply(p) - *q).norm() < tau)
        .count()
}

/// Hypothesis of correspondence `i`, scored on the whole set.
pub fn hypothesis_from_correspondence(
    corrs: &CorrespondenceSet,
    i: usize,
    cfg: &EstimatorConfig,
) -> Result<Hypothesis> {
    let feats = corrs
        .features
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("correspondences carry no features".into()))?;
    let (fp, fq) = feats
        .get(i)
        .ok_or_else(|| Error::InvalidArgument(format!("correspondence {i} out of range")))?;
    let transform = transform_from_correspondence(&corrs.src[i], &corrs.dst[i], fp, fq)?;
    Ok(Hypothesis {
        transform,
        inlier_count: count_inliers(&transform, corrs, cfg.acceptance_radius),
        source: HypothesisSource::Feature,
    })
}

/// Most supported of `candidates`; ties go to the earliest.
fn best(candidates: impl IntoIterator<Item = Hypothesis>) -> Option<Hypothesis> {
    candidates
        .into_iter()
        .fold(None, |acc: Option<Hypothesis>, h| match acc {
            Some(a) if a.inlier_count >= h.inlier_count => Some(a),
            _ => Some(h),
        })
}

/// One hypothesis per correspondence (the first `budget`), the most supported wins.
/// Degenerate feature fits are skipped; ties go to the lowest correspondence index.
pub fn propose_and_select(corrs: &CorrespondenceSet, cfg: &EstimatorConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    if corrs.features.is_none() {
        return Err(Error::InvalidArgument(
            "feature proposer needs correspondence features".into(),
        ));
    }
    let n = cfg.budget.map_or(corrs.len(), |b| b.min(corrs.len()));
    let hyps: Vec<Option<Hypothesis>> = (0..n)
        .into_par_iter()
        .map(|i| hypothesis_from_correspondence(corrs, i, cfg).ok())
        .collect();
    best(hyps.into_iter().flatten()).ok_or(Error::NoValidHypothesis)
}

/// Re-fits on the current inliers while support does not drop. With fewer than three
/// inliers the input is returned unchanged (and keeps its source).
pub fn refine(h: &Hypothesis, corrs: &CorrespondenceSet, cfg: &EstimatorConfig) -> Hypothesis {
    let tau = cfg.acceptance_radius;
    let mut current = Hypothesis {
        inlier_count: count_inliers(&h.transform, corrs, tau),
        ..*h
    };
    let mut improved = false;
    for _ in 0..cfg.refine_iterations {
        let idx: Vec<usize> = inlier_mask(&current.transform, corrs, tau)
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        if idx.len() < 3 {
            break;
        }
        let sub = corrs.subset(&idx);
        let Ok(t) = procrustes(&sub.src, &sub.dst, sub.weights.as_deref()) else {
            break;
        };
        let count = count_inliers(&t, corrs, tau);
        if count < current.inlier_count {
            break;
        }
        let fixed = t == current.transform;
        current = Hypothesis {
            transform: t,
            inlier_count: count,
            source: HypothesisSource::Refined,
        };
        improved = true;
        if fixed {
            break;
        }
    }
    if !improved {
        log::debug!("refinement skipped: fewer than 3 inliers or degenerate inlier set");
        return *h;
    }
    current
}

/// `budget` rounds of minimal-sample Procrustes, deterministic for a given seed.
pub fn ransac(corrs: &CorrespondenceSet, cfg: &EstimatorConfig, seed: u64) -> Result<Hypothesis> {
    cfg.validate()?;
    let m = cfg.ransac_sample;
    if corrs.len() < m {
        return Err(Error::InvalidArgument(format!(
            "ransac needs at least {m} correspondences, got {}",
            corrs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rounds = cfg.budget.unwrap_or(EstimatorConfig::DEFAULT_RANSAC_ITERATIONS);
    let samples: Vec<Vec<usize>> = (0..rounds)
        .map(|_| sample(&mut rng, corrs.len(), m).into_vec())
        .collect();
    let hyps: Vec<Option<Hypothesis>> = samples
        .par_iter()
        .map(|s| {
            let sub = corrs.subset(s);
            procrustes(&sub.src, &sub.dst, None).ok().map(|t| Hypothesis {
                transform: t,
                inlier_count: count_inliers(&t, corrs, cfg.acceptance_radius),
                source: HypothesisSource::Ransac,
            })
        })
        .collect();
    best(hyps.into_iter().flatten()).ok_or(Error::NoValidHypothesis)
}

/// Local-to-global registration: one Procrustes fit per patch (the first `budget` patch
/// ids in ascending order), scored on the whole set.
pub fn lgr(corrs: &CorrespondenceSet, cfg: &EstimatorConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let patches = corrs
        .patches
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("LGR needs patch ids".into()))?;
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &p) in patches.iter().enumerate() {
        groups.entry(p).or_default().push(i);
    }
    let n = cfg.budget.unwrap_or(groups.len());
    let groups: Vec<Vec<usize>> = groups.into_values().take(n).collect();
    let hyps: Vec<Option<Hypothesis>> = groups
        .par_iter()
        .map(|g| {
            let sub = corrs.subset(g);
            procrustes(&sub.src, &sub.dst, sub.weights.as_deref())
                .ok()
                .map(|t| Hypothesis {
                    transform: t,
                    inlier_count: count_inliers(&t, corrs, cfg.acceptance_radius),
                    source: HypothesisSource::Lgr,
                })
        })
        .collect();
    best(hyps.into_iter().flatten()).ok_or(Error::NoValidHypothesis)
}

/// Runs the chosen estimator and refines its winner.
pub fn estimate(
    corrs: &CorrespondenceSet,
    cfg: &EstimatorConfig,
    kind: EstimatorKind,
    seed: u64,
) -> Result<Hypothesis> {
    let h = match kind {
        EstimatorKind::Feature => propose_and_select(corrs, cfg)?,
        EstimatorKind::Ransac => ransac(corrs, cfg, seed)?,
        EstimatorKind::Lgr => lgr(corrs, cfg)?,
    };
    Ok(refine(&h, corrs, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{random_rotation, random_rotation_with};
    use crate::params::uniform;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::Rng;

    fn points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()).map(|v| (v - 0.5) * scale))
            .collect()
    }

    fn feature(rng: &mut ChaCha8Rng, c: usize) -> VectorFeature<f64> {
        VectorFeature::from_matrix(uniform(rng, c, 3, 1.0)).unwrap()
    }

    /// `n` correspondences, the first `inliers` of which are exact with exact features.
    fn scene(seed: u64, n: usize, inliers: usize) -> (CorrespondenceSet, RigidTransform) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = RigidTransform::new(random_rotation_with(&mut rng), Vector3::new(0.3, -0.2, 0.7));
        let src = points(&mut rng, n, 2.0);
        let mut dst = Vec::new();
        let mut feats = Vec::new();
        for (i, p) in src.iter().enumerate() {
            let f = feature(&mut rng, 6);
            if i < inliers {
                dst.push(gt.apply(p));
                feats.push((f.clone(), f.rotated(&gt.r)));
            } else {
                dst.push(points(&mut rng, 1, 2.0)[0]);
                let g = feature(&mut rng, 6);
                feats.push((f, g));
            }
        }
        let c = CorrespondenceSet::new(src, dst).unwrap().with_features(feats).unwrap();
        (c, gt)
    }

    fn close(a: &RigidTransform, b: &RigidTransform, tol: f64) -> bool {
        let (r, t) = a.errors_to(b);
        r <= tol && t <= tol
    }

    #[test]
    fn procrustes_identity_and_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = points(&mut rng, 10, 2.0);
        let id = procrustes(&src, &src, None).unwrap();
        assert!(close(&id, &RigidTransform::identity(), 1e-12));
        for seed in 0..100 {
            let gt = RigidTransform::new(random_rotation(seed), Vector3::new(1.0, -2.0, 3.0));
            let dst: Vec<_> = src.iter().map(|p| gt.apply(p)).collect();
            assert!(close(&procrustes(&src, &dst, None).unwrap(), &gt, 1e-9));
        }
    }

    #[test]
    fn procrustes_degenerate_inputs() {
        let line: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            procrustes(&line, &line, None),
            Err(Error::DegenerateConfiguration)
        ));
        let two = &line[..2];
        assert!(procrustes(two, two, None).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = points(&mut rng, 4, 1.0);
        assert!(procrustes(&p, &p, Some(&[0.0; 4])).is_err());
    }

    #[test]
    fn procrustes_planar_mirror_never_reflects() {
        let src = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 2.0, 0.0),
        ];
        let dst: Vec<_> = src.iter().map(|p| Point3::new(-p.x, p.y, p.z)).collect();
        if let Ok(t) = procrustes(&src, &dst, None) {
            assert!((t.r.matrix().determinant() - 1.0).abs() < 1e-12);
        }
        let dst3: Vec<_> = src.iter().map(|p| Point3::new(p.x, p.y, -p.z)).collect();
        let t = procrustes(&src, &dst3, None).unwrap();
        assert!((t.r.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn procrustes_weights_match_duplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = points(&mut rng, 6, 1.0);
        let dst = points(&mut rng, 6, 1.0);
        let w = [1.0, 2.0, 1.0, 3.0, 1.0, 1.0];
        let a = procrustes(&src, &dst, Some(&w)).unwrap();
        let (mut s2, mut d2) = (vec![], vec![]);
        for i in 0..6 {
            for _ in 0..w[i] as usize {
                s2.push(src[i]);
                d2.push(dst[i]);
            }
        }
        assert!(close(&a, &procrustes(&s2, &d2, None).unwrap(), 1e-10));
    }

    #[test]
    fn procrustes_is_optimal_against_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = points(&mut rng, 12, 2.0);
        let dst = points(&mut rng, 12, 2.0);
        let cost = |t: &RigidTransform| {
            src.iter()
                .zip(&dst)
                .map(|(s, d)| (t.apply(s) - d).norm_squared())
                .sum::<f64>()
        };
        let opt = procrustes(&src, &dst, None).unwrap();
        let (cs, cd) = (src.iter().sum::<Point3>() / 12.0, dst.iter().sum::<Point3>() / 12.0);
        for _ in 0..1000 {
            let r = random_rotation_with(&mut rng);
            let probe = RigidTransform::new(r, cd - r.rotate(&cs));
            assert!(cost(&opt) <= cost(&probe) + 1e-12);
        }
    }

    #[test]
    fn feature_fit_recovery_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = feature(&mut rng, 8);
        assert!(
            fit_rotation_from_features(&f, &f)
                .unwrap()
                .angle_to(&Rotation::identity())
                < 1e-12
        );
        for seed in 0..50 {
            let r = random_rotation(seed);
            assert!(fit_rotation_from_features(&f, &f.rotated(&r)).unwrap().angle_to(&r) <= 1e-9);
        }
        let rank1 = VectorFeature::from_rows(&[Vector3::new(1.0, 2.0, 3.0), Vector3::new(2.0, 4.0, 6.0)]);
        assert!(matches!(
            fit_rotation_from_features(&rank1, &rank1),
            Err(Error::UnderdeterminedRotation)
        ));
        assert!(fit_rotation_from_features(&f, &feature(&mut rng, 3)).is_err());
    }

    #[test]
    fn feature_fit_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for seed in 0..50 {
            let (fp, fq) = (feature(&mut rng, 5), feature(&mut rng, 5));
            let (r1, r2) = (random_rotation(seed), random_rotation(seed + 1000));
            let base = fit_rotation_from_features(&fp, &fq).unwrap();
            let moved = fit_rotation_from_features(&fp.rotated(&r1), &fq.rotated(&r2)).unwrap();
            assert!(moved.angle_to(&(r2 * base * r1.transpose())) <= 1e-9);
        }
    }

    #[test]
    fn correspondence_hypothesis() {
        let f = VectorFeature::from_rows(&[Vector3::x(), Vector3::y()]);
        let o = Point3::zeros();
        let t = transform_from_correspondence(&o, &o, &f, &f).unwrap();
        assert!(close(&t, &RigidTransform::identity(), 1e-15));
        let (c, gt) = scene(7, 30, 30);
        for i in 0..30 {
            let h = hypothesis_from_correspondence(&c, i, &EstimatorConfig::indoor()).unwrap();
            assert!(close(&h.transform, &gt, 1e-9));
            assert_eq!(h.inlier_count, 30);
        }
    }

    #[test]
    fn inlier_counting() {
        let (c, gt) = scene(8, 50, 50);
        let tau = 0.1;
        assert_eq!(count_inliers(&gt, &c, tau), 50);
        let shifted = RigidTransform::new(gt.r, gt.t + Vector3::new(10.0 * tau, 0.0, 0.0));
        assert_eq!(count_inliers(&shifted, &c, tau), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let t = RigidTransform::new(random_rotation_with(&mut rng), Vector3::new(rng.random(), 0.0, 0.0));
            let oracle = (0..50)
                .filter(|&i| {
                    let d = t.r.matrix() * c.src[i] + t.t - c.dst[i];
                    (d.x * d.x + d.y * d.y + d.z * d.z).sqrt() < 0.7
                })
                .count();
            assert_eq!(count_inliers(&t, &c, 0.7), oracle);
        }
    }

    #[test]
    fn proposer_selects_ground_truth() {
        let (c, gt) = scene(10, 100, 60);
        let h = propose_and_select(&c, &EstimatorConfig::indoor()).unwrap();
        assert!(close(&h.transform, &gt, 1e-9));
        assert!(h.inlier_count >= 60);
        assert_eq!(h.source, HypothesisSource::Feature);
        let one = c.subset(&[3]);
        let h1 = propose_and_select(&one, &EstimatorConfig::indoor()).unwrap();
        assert_eq!(
            h1,
            hypothesis_from_correspondence(&one, 0, &EstimatorConfig::indoor()).unwrap()
        );
    }

    #[test]
    fn proposer_rejects_rank_one_features() {
        let (mut c, _) = scene(11, 5, 5);
        let r1 = VectorFeature::from_rows(&[Vector3::x(), Vector3::x() * 2.0]);
        c.features = Some(vec![(r1.clone(), r1); 5]);
        assert!(matches!(
            propose_and_select(&c, &EstimatorConfig::indoor()),
            Err(Error::NoValidHypothesis)
        ));
    }

    #[test]
    fn proposer_order_invariance() {
        let (c, gt) = scene(12, 80, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let perm = sample(&mut rng, 80, 80).into_vec();
            let h = propose_and_select(&c.subset(&perm), &EstimatorConfig::indoor()).unwrap();
            assert!(close(&h.transform, &gt, 1e-9));
        }
    }

    #[test]
    fn budget_limits_proposals() {
        let (c, gt) = scene(14, 100, 30);
        let tail: Vec<usize> = (30..100).chain(0..30).collect();
        let c = c.subset(&tail);
        let cfg = EstimatorConfig {
            budget: Some(70),
            ..EstimatorConfig::indoor()
        };
        let h = propose_and_select(&c, &cfg).unwrap();
        assert!(!close(&h.transform, &gt, 1e-3));
        let cfg = EstimatorConfig {
            budget: Some(71),
            ..cfg
        };
        assert!(close(&propose_and_select(&c, &cfg).unwrap().transform, &gt, 1e-9));
    }

    #[test]
    fn refine_fixed_point_and_improvement() {
        let (c, gt) = scene(15, 60, 60);
        let cfg = EstimatorConfig::indoor();
        let h = Hypothesis {
            transform: gt,
            inlier_count: 0,
            source: HypothesisSource::Feature,
        };
        let r = refine(&h, &c, &cfg);
        assert!(close(&r.transform, &gt, 1e-12));
        assert_eq!(r.inlier_count, 60);

        let mut better = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let gt = RigidTransform::new(random_rotation_with(&mut rng), Vector3::zeros());
            let src = points(&mut rng, 100, 2.0);
            let dst: Vec<_> = src
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    if i < 70 {
                        gt.apply(p)
                    } else {
                        // at least 1 m off under the ground truth, so never an accidental inlier
                        let dir = points(&mut rng, 1, 2.0)[0].normalize();
                        gt.apply(p) + dir * (1.0 + rng.random::<f64>())
                    }
                })
                .collect();
            let c = CorrespondenceSet::new(src, dst).unwrap();
            let axis = Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            let delta = RigidTransform::new(
                Rotation::from_axis_angle(&axis, 2f64.to_radians()),
                axis.normalize() * 0.05,
            );
            let start = crate::geom::compose(&delta, &gt);
            let h = Hypothesis {
                transform: start,
                inlier_count: 0,
                source: HypothesisSource::Feature,
            };
            let r = refine(
                &h,
                &c,
                &EstimatorConfig {
                    acceptance_radius: 0.2,
                    ..cfg.clone()
                },
            );
            if r.transform.r.angle_to(&gt.r) < start.r.angle_to(&gt.r) {
                better += 1;
            }
        }
        assert_eq!(better, 100);
    }

    #[test]
    fn refine_with_too_few_inliers_is_unchanged() {
        let (c, gt) = scene(16, 10, 10);
        let far = RigidTransform::new(gt.r, gt.t + Vector3::new(50.0, 0.0, 0.0));
        let h = Hypothesis {
            transform: far,
            inlier_count: 7,
            source: HypothesisSource::Ransac,
        };
        assert_eq!(refine(&h, &c, &EstimatorConfig::indoor()), h);
    }

    #[test]
    fn ransac_recovers_and_is_reproducible() {
        let (c, gt) = scene(17, 50, 50);
        let cfg = EstimatorConfig {
            budget: Some(20),
            ..EstimatorConfig::indoor()
        };
        let h = refine(&ransac(&c, &cfg, 1).unwrap(), &c, &cfg);
        assert!(close(&h.transform, &gt, 1e-6));
        let (c, _) = scene(18, 50, 10);
        assert_eq!(ransac(&c, &cfg, 42).unwrap(), ransac(&c, &cfg, 42).unwrap());
        assert!(ransac(&c.subset(&[0, 1]), &cfg, 0).is_err());
    }

    #[test]
    fn lgr_uses_patches() {
        let (c, gt) = scene(19, 60, 20);
        let patches: Vec<usize> = (0..60).map(|i| i / 10).collect();
        let c = c.with_patches(patches).unwrap();
        let h = lgr(&c, &EstimatorConfig::indoor()).unwrap();
        assert_eq!(h.source, HypothesisSource::Lgr);
        assert!(close(&h.transform, &gt, 1e-9));
        let cfg = EstimatorConfig {
            budget: Some(1),
            ..EstimatorConfig::indoor()
        };
        assert!(close(&lgr(&c, &cfg).unwrap().transform, &gt, 1e-9));
        let cfg = EstimatorConfig { budget: Some(1), ..cfg };
        let rev = c.subset(&(0..60).rev().collect::<Vec<_>>());
        let mut rev = rev;
        rev.patches = Some((0..60).map(|i| i / 10).collect());
        assert!(!close(&lgr(&rev, &cfg).unwrap().transform, &gt, 1e-3));
    }

    #[test]
    fn estimator_kind_parsing_and_json() {
        for k in [EstimatorKind::Feature, EstimatorKind::Ransac, EstimatorKind::Lgr] {
            assert_eq!(k.to_string().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("icp".parse::<EstimatorKind>().is_err());
        let h = Hypothesis {
            transform: RigidTransform::identity(),
            inlier_count: 4,
            source: HypothesisSource::Refined,
        };
        let v: serde_json::Value = serde_json::to_value(h).unwrap();
        assert_eq!(v["inliers"], 4);
        assert_eq!(v["source"], "refined");
        assert_eq!(v["r"].as_array().unwrap().len(), 9);
        assert_eq!(serde_json::from_value::<Hypothesis>(v).unwrap(), h);
    }

    proptest! {
        #[test]
        fn exact_inliers_each_give_ground_truth(seed in 0u64..1000) {
            let (c, gt) = scene(seed, 12, 6);
            for i in 0..6 {
                let t = transform_from_correspondence(&c.src[i], &c.dst[i], &c.features.as_ref().unwrap()[i].0, &c.features.as_ref().unwrap()[i].1).unwrap();
                prop_assert!(close(&t, &gt, 1e-9));
            }
        }
    }
}
