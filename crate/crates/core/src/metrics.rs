//! Correspondence and registration metrics: IR, FMR, RMSE/RR, RE, TE and TR.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Point3, Result, RigidTransform, Rotation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricThresholds {
    pub ir: f64,
    pub fmr: f64,
    pub rr: f64,
    pub re_deg: f64,
    pub te_m: f64,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self::indoor()
    }
}

impl MetricThresholds {
    pub fn indoor() -> Self {
        Self {
            ir: 0.1,
            fmr: 0.05,
            rr: 0.2,
            re_deg: 15.0,
            te_m: 0.3,
        }
    }

    pub fn outdoor() -> Self {
        Self {
            re_deg: 5.0,
            te_m: 2.0,
            ..Self::indoor()
        }
    }
}

fn fraction(flags: impl ExactSizeIterator<Item = bool>) -> Result<f64> {
    let n = flags.len();
    if n == 0 {
        return Err(Error::InvalidArgument("metric over an empty set".into()));
    }
    Ok(flags.filter(|&b| b).count() as f64 / n as f64)
}

/// Fraction of pairs with `|R_gt p + t_gt - q| < tau`.
pub fn inlier_ratio(src: &[Point3], dst: &[Point3], t_gt: &RigidTransform, tau: f64) -> Result<f64> {
    if src.len() != dst.len() {
        return Err(Error::dims("correspondence targets", src.len(), dst.len()));
    }
    fraction(src.iter().zip(dst).map(|(p, q)| (t_gt.apply(p) - q).norm() < tau))
}

/// Fraction of pairs whose inlier ratio exceeds `tau` (strictly).
pub fn feature_matching_recall(inlier_ratios: &[f64], tau: f64) -> Result<f64> {
    fraction(inlier_ratios.iter().map(|&ir| ir > tau))
}

/// Root mean squared distance between `T_est p` and `q` over ground-truth pairs.
pub fn rmse(src: &[Point3], dst: &[Point3], t_est: &RigidTransform) -> Result<f64> {
    if src.len() != dst.len() {
        return Err(Error::dims("correspondence targets", src.len(), dst.len()));
    }
    if src.is_empty() {
        return Err(Error::InvalidArgument("rmse over an empty set".into()));
    }
    let s: f64 = src
        .iter()
        .zip(dst)
        .map(|(p, q)| (t_est.apply(p) - q).norm_squared())
        .sum();
    Ok((s / src.len() as f64).sqrt())
}

/// Fraction of pairs with RMSE below `tau` (strictly).
pub fn registration_recall(rmses: &[f64], tau: f64) -> Result<f64> {
    fraction(rmses.iter().map(|&r| r < tau))
}

/// Geodesic distance in degrees.
pub fn rotation_error(r_est: &Rotation, r_gt: &Rotation) -> f64 {
    r_est.angle_to(r_gt).to_degrees()
}

pub fn translation_error(t_est: &nalgebra::Vector3<f64>, t_gt: &nalgebra::Vector3<f64>) -> f64 {
    (t_est - t_gt).norm()
}

/// Fraction of `(RE deg, TE m)` pairs with `RE < tau_r` and `TE < tau_t`.
pub fn transformation_recall(errors: &[(f64, f64)], tau_r: f64, tau_t: f64) -> Result<f64> {
    fraction(errors.iter().map(|&(re, te)| re < tau_r && te < tau_t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub ir: Option<f64>,
    pub rmse: Option<f64>,
    pub re_deg: f64,
    pub te_m: f64,
}

impl PairMetrics {
    /// `correspondences` are predicted matches; `gt_pairs` are ground-truth pairs for RMSE.
    pub fn compute(
        t_est: &RigidTransform,
        t_gt: &RigidTransform,
        correspondences: Option<(&[Point3], &[Point3])>,
        gt_pairs: Option<(&[Point3], &[Point3])>,
        th: &MetricThresholds,
    ) -> Result<Self> {
        Ok(Self {
            ir: correspondences
                .map(|(s, d)| inlier_ratio(s, d, t_gt, th.ir))
                .transpose()?,
            rmse: gt_pairs.map(|(s, d)| rmse(s, d, t_est)).transpose()?,
            re_deg: rotation_error(&t_est.r, &t_gt.r),
            te_m: translation_error(&t_est.t, &t_gt.t),
        })
    }

    /// Registered when RMSE is below `tau_rr`; without ground-truth pairs, when both RE and
    /// TE are below their thresholds.
    pub fn success(&self, th: &MetricThresholds) -> bool {
        match self.rmse {
            Some(r) => r < th.rr,
            None => self.re_deg < th.re_deg && self.te_m < th.te_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub fmr: Option<f64>,
    pub rr: Option<f64>,
    pub tr: Option<f64>,
    /// Over successfully registered pairs only.
    pub mean_re: Option<f64>,
    pub mean_te: Option<f64>,
}

pub fn aggregate(pairs: &BTreeMap<String, PairMetrics>, th: &MetricThresholds) -> AggregateMetrics {
    let irs: Vec<f64> = pairs.values().filter_map(|m| m.ir).collect();
    let rmses: Vec<f64> = pairs.values().filter_map(|m| m.rmse).collect();
    let errs: Vec<(f64, f64)> = pairs.values().map(|m| (m.re_deg, m.te_m)).collect();
    let ok: Vec<&PairMetrics> = pairs.values().filter(|m| m.success(th)).collect();
    let avg = |f: &dyn Fn(&PairMetrics) -> f64| {
        (!ok.is_empty()).then(|| ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64)
    };
    AggregateMetrics {
        fmr: feature_matching_recall(&irs, th.fmr).ok(),
        rr: registration_recall(&rmses, th.rr).ok(),
        tr: transformation_recall(&errs, th.re_deg, th.te_m).ok(),
        mean_re: avg(&|m| m.re_deg),
        mean_te: avg(&|m| m.te_m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::random_rotation;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Vec<Point3> {
        (0..10)
            .map(|i| Point3::new(i as f64 * 0.3, (i % 3) as f64, 0.5))
            .collect()
    }

    #[test]
    fn inlier_ratio_fixtures() {
        let p = grid();
        let t = RigidTransform::new(random_rotation(1), Vector3::new(1.0, 2.0, 3.0));
        let q: Vec<_> = p.iter().map(|x| t.apply(x)).collect();
        assert_eq!(inlier_ratio(&p, &q, &t, 0.1).unwrap(), 1.0);
        let off: Vec<_> = q.iter().map(|x| x + Vector3::new(0.2, 0.0, 0.0)).collect();
        assert_eq!(inlier_ratio(&p, &off, &t, 0.1).unwrap(), 0.0);
        let mixed: Vec<_> = q
            .iter()
            .enumerate()
            .map(|(i, x)| {
                if i < 7 {
                    x + Vector3::new(0.0, 0.05, 0.0)
                } else {
                    x + Vector3::new(0.0, 0.0, 0.5)
                }
            })
            .collect();
        assert_eq!(inlier_ratio(&p, &mixed, &t, 0.1).unwrap(), 0.7);
        assert!(inlier_ratio(&[], &[], &t, 0.1).is_err());
    }

    #[test]
    fn fmr_fixtures() {
        assert_eq!(feature_matching_recall(&[1.0, 1.0], 0.05).unwrap(), 1.0);
        assert_eq!(feature_matching_recall(&[0.0, 0.0], 0.05).unwrap(), 0.0);
        assert_eq!(feature_matching_recall(&[0.04, 0.06], 0.05).unwrap(), 0.5);
        assert_eq!(feature_matching_recall(&[0.05], 0.05).unwrap(), 0.0);
    }

    #[test]
    fn rmse_fixtures() {
        let p = grid();
        let t = RigidTransform::new(random_rotation(2), Vector3::new(0.0, 1.0, 0.0));
        let q: Vec<_> = p.iter().map(|x| t.apply(x)).collect();
        assert_eq!(rmse(&p, &q, &t).unwrap(), 0.0);
        let shifted = RigidTransform::new(t.r, t.t + Vector3::new(0.0, 0.0, 0.25));
        assert!((rmse(&p, &q, &shifted).unwrap() - 0.25).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let est = RigidTransform::new(
            random_rotation(4),
            Vector3::new(rng.random(), rng.random(), rng.random()),
        );
        let mut s = 0.0;
        for (a, b) in p.iter().zip(&q) {
            let m = est.r.matrix() * a + est.t - b;
            s += m.x * m.x + m.y * m.y + m.z * m.z;
        }
        assert!((rmse(&p, &q, &est).unwrap() - (s / 10.0).sqrt()).abs() < 1e-12);
        assert_eq!(registration_recall(&[0.1, 0.2, 0.3, 0.19], 0.2).unwrap(), 0.5);
    }

    #[test]
    fn rotation_error_fixtures() {
        let id = Rotation::identity();
        assert_eq!(rotation_error(&id, &id), 0.0);
        let half = Rotation::from_axis_angle(&Vector3::z(), std::f64::consts::PI);
        assert!((rotation_error(&half, &id) - 180.0).abs() < 1e-9);
        let axis = Vector3::new(1.0, -2.0, 0.5);
        let r = Rotation::from_axis_angle(&axis, 37f64.to_radians());
        assert!((rotation_error(&r, &id) - 37.0).abs() <= 1e-9);
        assert!((rotation_error(&id, &r) - 37.0).abs() <= 1e-9);
    }

    #[test]
    fn translation_error_fixtures() {
        let z = Vector3::zeros();
        assert_eq!(translation_error(&z, &z), 0.0);
        assert_eq!(translation_error(&Vector3::new(1.0, 1.0, 0.0), &z), 2f64.sqrt());
        let a = Vector3::new(0.3, -1.1, 2.5);
        let b = Vector3::new(-0.4, 0.2, 1.0);
        let want = ((0.7f64).powi(2) + (1.3f64).powi(2) + (1.5f64).powi(2)).sqrt();
        assert!((translation_error(&a, &b) - want).abs() < 1e-15);
    }

    #[test]
    fn transformation_recall_fixtures() {
        assert_eq!(transformation_recall(&[(0.0, 0.0); 4], 15.0, 0.3).unwrap(), 1.0);
        assert_eq!(transformation_recall(&[(15.0, 0.0)], 15.0, 0.3).unwrap(), 0.0);
        assert_eq!(transformation_recall(&[(1.0, 0.3)], 15.0, 0.3).unwrap(), 0.0);
        let mixed = [(1.0, 0.1), (16.0, 0.1), (14.9, 0.29), (2.0, 0.5), (15.0, 0.0)];
        assert_eq!(transformation_recall(&mixed, 15.0, 0.3).unwrap(), 0.4);
    }

    #[test]
    fn frame_change_invariance() {
        let p = grid();
        let gt = RigidTransform::new(random_rotation(5), Vector3::new(0.5, 0.0, 1.0));
        let est = RigidTransform::new(random_rotation(6), Vector3::new(0.4, 0.1, 1.2));
        let q: Vec<_> = p.iter().map(|x| gt.apply(x)).collect();
        let th = MetricThresholds::indoor();
        let a = PairMetrics::compute(&est, &gt, Some((&p, &q)), Some((&p, &q)), &th).unwrap();
        // move the target frame by W: q' = W q, T' = W T
        let w = RigidTransform::new(random_rotation(7), Vector3::new(-3.0, 2.0, 1.0));
        let q2: Vec<_> = q.iter().map(|x| w.apply(x)).collect();
        let (gt2, est2) = (crate::geom::compose(&w, &gt), crate::geom::compose(&w, &est));
        let b = PairMetrics::compute(&est2, &gt2, Some((&p, &q2)), Some((&p, &q2)), &th).unwrap();
        assert!((a.rmse.unwrap() - b.rmse.unwrap()).abs() < 1e-12);
        assert_eq!(a.ir, b.ir);
        assert!((a.re_deg - b.re_deg).abs() < 1e-9);
        // translation error is frame dependent under rotation of the target frame only
        // when rotations differ; it is preserved for a pure world translation
        let shift = RigidTransform::from_translation(Vector3::new(5.0, 5.0, 5.0));
        let (gt3, est3) = (crate::geom::compose(&shift, &gt), crate::geom::compose(&shift, &est));
        let c = PairMetrics::compute(&est3, &gt3, None, None, &th).unwrap();
        assert!((a.te_m - c.te_m).abs() < 1e-12);
    }

    #[test]
    fn aggregate_over_successes() {
        let th = MetricThresholds::indoor();
        let mut m = BTreeMap::new();
        m.insert(
            "a".to_string(),
            PairMetrics {
                ir: Some(0.5),
                rmse: Some(0.1),
                re_deg: 2.0,
                te_m: 0.1,
            },
        );
        m.insert(
            "b".to_string(),
            PairMetrics {
                ir: Some(0.01),
                rmse: Some(0.5),
                re_deg: 40.0,
                te_m: 1.0,
            },
        );
        m.insert(
            "c".to_string(),
            PairMetrics {
                ir: Some(0.2),
                rmse: Some(0.05),
                re_deg: 4.0,
                te_m: 0.2,
            },
        );
        let a = aggregate(&m, &th);
        assert_eq!(a.fmr, Some(2.0 / 3.0));
        assert_eq!(a.rr, Some(2.0 / 3.0));
        assert_eq!(a.tr, Some(2.0 / 3.0));
        assert_eq!(a.mean_re, Some(3.0));
        assert!((a.mean_te.unwrap() - 0.15).abs() < 1e-15);
        let empty = aggregate(&BTreeMap::new(), &th);
        assert_eq!(empty.fmr, None);
        assert_eq!(empty.mean_re, None);
    }
}
