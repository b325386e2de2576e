use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{KnnIndex, PointCloud, RigidTransform};
use crate::{Error, Result};

/// For every point of `p`, whether `T p` has a neighbour in `q` closer than `radius`.
pub fn overlap_mask(p: &PointCloud, q: &PointCloud, t: &RigidTransform, radius: f64) -> Result<Vec<bool>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "overlap radius must be positive, got {radius}"
        )));
    }
    if p.is_empty() || q.is_empty() {
        return Ok(vec![false; p.len()]);
    }
    let index = KnnIndex::new(q)?;
    let r2 = radius * radius;
    Ok(p.points()
        .par_iter()
        .map(|x| index.nearest(&t.apply(x)).0 <= r2)
        .collect())
}

/// Fraction of `p` whose nearest neighbour in `q`, after aligning `p` by `t`, is within `radius`.
pub fn overlap_ratio(p: &PointCloud, q: &PointCloud, t: &RigidTransform, radius: f64) -> Result<f64> {
    let mask = overlap_mask(p, q, t, radius)?;
    if mask.is_empty() {
        return Ok(0.0);
    }
    Ok(mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64)
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Cuts `cloud` with a plane normal to `dir` so that `ratio` of the points lie on one side.
/// Both ends of the direction are candidate cuts; the one whose points overlap more is
/// removed. Returns retained indices in input order.
fn crop_one(cloud: &PointCloud, overlap: &[bool], dir: &Vector3<f64>, ratio: f64) -> Result<Vec<usize>> {
    let n = cloud.len();
    let cut = ((ratio * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let proj: Vec<f64> = cloud.iter().map(|p| p.dot(dir)).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let low = &order[..cut];
    let high = &order[n - cut..];
    let frac = |part: &[usize]| {
        if part.is_empty() {
            0.0
        } else {
            part.iter().filter(|&&i| overlap[i]).count() as f64 / part.len() as f64
        }
    };
    let discard = if frac(high) >= frac(low) { high } else { low };
    let mut keep = vec![true; n];
    for &i in discard {
        keep[i] = false;
    }
    let retained: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if retained.is_empty() {
        return Err(Error::DegenerateCrop);
    }
    Ok(retained)
}

/// Plane-cut augmentation that lowers the overlap of a pair. Directions for the two clouds
/// are drawn independently. Returns retained indices of `p` and `q`.
pub fn random_crop_indices(
    p: &PointCloud,
    q: &PointCloud,
    t_gt: &RigidTransform,
    ratio: f64,
    overlap_radius: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "crop ratio must lie in (0, 1), got {ratio}"
        )));
    }
    p.ensure_non_empty()?;
    q.ensure_non_empty()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir_p = random_direction(&mut rng);
    let dir_q = random_direction(&mut rng);
    let mask_p = overlap_mask(p, q, t_gt, overlap_radius)?;
    let mask_q = overlap_mask(q, p, &t_gt.inverse(), overlap_radius)?;
    Ok((
        crop_one(p, &mask_p, &dir_p, ratio)?,
        crop_one(q, &mask_q, &dir_q, ratio)?,
    ))
}

pub fn random_crop(
    p: &PointCloud,
    q: &PointCloud,
    t_gt: &RigidTransform,
    ratio: f64,
    overlap_radius: f64,
    seed: u64,
) -> Result<(PointCloud, PointCloud)> {
    let (ip, iq) = random_crop_indices(p, q, t_gt, ratio, overlap_radius, seed)?;
    Ok((p.select(&ip), q.select(&iq)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_transform, random_rotation, Point3};
    use rand::Rng;

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_clouds_fully_overlap() {
        let c = random_cloud(1, 100);
        assert_eq!(overlap_ratio(&c, &c, &RigidTransform::identity(), 0.01).unwrap(), 1.0);
    }

    #[test]
    fn distant_clouds_do_not_overlap() {
        let c = random_cloud(2, 100);
        let far = apply_transform(&c, &RigidTransform::from_translation(Vector3::new(100.0, 0.0, 0.0)));
        assert_eq!(overlap_ratio(&c, &far, &RigidTransform::identity(), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn overlap_respects_ground_truth_alignment() {
        let c = random_cloud(3, 200);
        let t = RigidTransform::new(random_rotation(3), Vector3::new(1.0, 2.0, 3.0));
        let moved = apply_transform(&c, &t);
        assert_eq!(overlap_ratio(&c, &moved, &t, 1e-6).unwrap(), 1.0);
    }

    #[test]
    fn half_shifted_grid_matches_exhaustive_count() {
        let pts: Vec<[f64; 3]> = (0..10)
            .flat_map(|i| (0..10).map(move |j| [i as f64, j as f64, 0.0]))
            .collect();
        let p = PointCloud::from_slice(&pts).unwrap();
        let shifted: Vec<[f64; 3]> = pts.iter().map(|a| [a[0] + 5.0, a[1], a[2]]).collect();
        let q = PointCloud::from_slice(&shifted).unwrap();
        let radius = 0.25;
        let expected = p.iter().filter(|a| q.iter().any(|b| (*a - b).norm() <= radius)).count() as f64 / p.len() as f64;
        assert_eq!(expected, 0.5);
        assert_eq!(
            overlap_ratio(&p, &q, &RigidTransform::identity(), radius).unwrap(),
            expected
        );
    }

    #[test]
    fn crop_retains_complement_fraction() {
        let c = random_cloud(4, 1000);
        let (a, b) = random_crop(&c, &c, &RigidTransform::identity(), 0.3, 0.01, 11).unwrap();
        assert!((a.len() as i64 - 700).abs() <= 1);
        assert!((b.len() as i64 - 700).abs() <= 1);
    }

    #[test]
    fn crop_is_reproducible() {
        let c = random_cloud(5, 500);
        let x = random_crop(&c, &c, &RigidTransform::identity(), 0.3, 0.01, 3).unwrap();
        let y = random_crop(&c, &c, &RigidTransform::identity(), 0.3, 0.01, 3).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn crop_lowers_mean_overlap() {
        let c = random_cloud(6, 400);
        let id = RigidTransform::identity();
        let before = overlap_ratio(&c, &c, &id, 0.01).unwrap();
        let after = (0..100)
            .map(|s| {
                let (a, b) = random_crop(&c, &c, &id, 0.3, 0.01, s).unwrap();
                overlap_ratio(&a, &b, &id, 0.01).unwrap()
            })
            .sum::<f64>()
            / 100.0;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn rejects_ratio_out_of_range() {
        let c = random_cloud(7, 10);
        let id = RigidTransform::identity();
        assert!(random_crop(&c, &c, &id, 0.0, 0.1, 0).is_err());
        assert!(random_crop(&c, &c, &id, 1.0, 0.1, 0).is_err());
    }

    #[test]
    fn single_point_crop_is_degenerate() {
        let c = random_cloud(8, 1);
        let id = RigidTransform::identity();
        assert!(matches!(
            random_crop(&c, &c, &id, 0.6, 0.1, 0),
            Err(Error::DegenerateCrop)
        ));
    }
}
