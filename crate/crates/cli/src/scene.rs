//! Synthetic registration pairs with known ground truth, and oracle equivariant features.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Vector3};
use parereg_core::estimator::CorrespondenceSet;
use parereg_core::geom::{overlap_ratio, random_crop_indices, random_rotation_with};
use parereg_core::{Point3, PointCloud, RigidTransform, Rotation, VectorFeature};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result, StageExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    PlaneGrid,
    BoxRoom,
    RandomSurface,
    /// One of the other three, drawn per scene.
    Mix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub generator: Generator,
    pub points: usize,
    /// Side length of the sampled surface, metres.
    pub extent: f64,
    /// Target overlap ratio; when set, the crop ratio is searched to reach it.
    pub overlap: Option<f64>,
    pub noise: f64,
    /// Fraction removed from each cloud when no overlap target is given; 0 disables cropping.
    pub crop_ratio: f64,
    pub overlap_radius: f64,
    /// Largest rotation angle, radians; values of pi or more sample SO(3) uniformly.
    pub rotation_max: f64,
    /// Half side of the cube translations are drawn from, metres.
    pub translation_max: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::indoor()
    }
}

impl SceneSpec {
    pub fn indoor() -> Self {
        Self {
            generator: Generator::Mix,
            points: 2000,
            extent: 2.0,
            overlap: None,
            noise: 0.005,
            crop_ratio: 0.3,
            overlap_radius: 0.0375,
            rotation_max: TAU,
            translation_max: 1.0,
        }
    }

    pub fn outdoor() -> Self {
        Self {
            points: 4000,
            extent: 40.0,
            noise: 0.01,
            overlap_radius: 0.45,
            translation_max: 2.0,
            ..Self::indoor()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::input(format!("config.scene: {m}")));
        if self.points == 0 {
            return bad("point count must be positive");
        }
        if let Some(o) = self.overlap {
            if !(o > 0.0 && o <= 1.0) {
                return bad("overlap target must lie in (0, 1]");
            }
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad("extent must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative");
        }
        if !(0.0..1.0).contains(&self.crop_ratio) {
            return bad("crop ratio must lie in [0, 1)");
        }
        if !(self.overlap_radius > 0.0) {
            return bad("overlap radius must be positive");
        }
        if !(self.rotation_max >= 0.0 && self.translation_max >= 0.0) {
            return bad("rotation and translation ranges must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub p: PointCloud,
    /// `T_gt p` for the twins of retained source points, plus independent noise.
    pub q: PointCloud,
    pub t_gt: RigidTransform,
    /// `(i, j)` with `q[j]` the transformed duplicate of `p[i]`, ascending in `i`.
    pub gt_pairs: Vec<(usize, usize)>,
    /// Overlap of the noiseless cropped pair.
    pub overlap: f64,
}

fn plane_grid(rng: &mut ChaCha8Rng, n: usize, l: f64) -> Vec<Point3> {
    let m = (n as f64).sqrt().ceil() as usize;
    let h = l / m as f64;
    let (a, f1, f2) = (0.08 * l, rng.random::<f64>() * TAU, rng.random::<f64>() * TAU);
    (0..n)
        .map(|k| {
            let (x, y) = ((k % m) as f64 * h, (k / m) as f64 * h);
            Point3::new(x, y, a * (TAU * x / l + f1).sin() * (1.5 * TAU * y / l + f2).cos())
        })
        .collect()
}

fn random_surface(rng: &mut ChaCha8Rng, n: usize, l: f64) -> Vec<Point3> {
    let waves: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            [
                rng.random_range(0.02..0.08) * l,
                rng.random_range(-2.0..2.0) * TAU / l,
                rng.random_range(-2.0..2.0) * TAU / l,
                rng.random::<f64>() * TAU,
            ]
        })
        .collect();
    (0..n)
        .map(|_| {
            let (x, y) = (rng.random::<f64>() * l, rng.random::<f64>() * l);
            let z = waves.iter().map(|w| w[0] * (w[1] * x + w[2] * y + w[3]).sin()).sum();
            Point3::new(x, y, z)
        })
        .collect()
}

/// Rectangle `origin + s u + t v`, `s, t` in `[0, 1]`.
type Face = (Point3, Vector3<f64>, Vector3<f64>);

fn box_faces(origin: Point3, d: Vector3<f64>, top: bool) -> Vec<Face> {
    let (ex, ey, ez) = (Vector3::x() * d.x, Vector3::y() * d.y, Vector3::z() * d.z);
    let mut faces = vec![
        (origin, ex, ey),
        (origin, ex, ez),
        (origin + ey, ex, ez),
        (origin, ey, ez),
        (origin + ex, ey, ez),
    ];
    if top {
        faces.push((origin + ez, ex, ey));
    }
    faces
}

/// Floor and four walls of a room with a box standing on the floor.
fn box_room(rng: &mut ChaCha8Rng, n: usize, l: f64) -> Vec<Point3> {
    let room = Vector3::new(l, 0.8 * l, 0.5 * l).map(|v| v * rng.random_range(0.9..1.1));
    let cube = Vector3::new(0.25 * l, 0.2 * l, 0.15 * l);
    let at = Point3::new(
        rng.random_range(0.1..0.6) * room.x,
        rng.random_range(0.1..0.6) * room.y,
        0.0,
    );
    let mut faces = box_faces(Point3::zeros(), room, false);
    faces.extend(box_faces(at, cube, true).into_iter().skip(1));
    let areas: Vec<f64> = faces.iter().map(|(_, u, v)| u.cross(v).norm()).collect();
    let total: f64 = areas.iter().sum();
    (0..n)
        .map(|_| {
            let mut a = rng.random::<f64>() * total;
            let mut k = 0;
            while k + 1 < faces.len() && a >= areas[k] {
                a -= areas[k];
                k += 1;
            }
            let (o, u, v) = faces[k];
            o + u * rng.random::<f64>() + v * rng.random::<f64>()
        })
        .collect()
}

fn sample_surface(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> Vec<Point3> {
    let kind = match spec.generator {
        Generator::Mix => [Generator::PlaneGrid, Generator::BoxRoom, Generator::RandomSurface][rng.random_range(0..3)],
        g => g,
    };
    let mut pts = match kind {
        Generator::PlaneGrid => plane_grid(rng, spec.points, spec.extent),
        Generator::BoxRoom => box_room(rng, spec.points, spec.extent),
        _ => random_surface(rng, spec.points, spec.extent),
    };
    let c = pts.iter().sum::<Point3>() / pts.len() as f64;
    for p in &mut pts {
        *p -= c;
    }
    pts
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn sample_motion(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> RigidTransform {
    let r = if spec.rotation_max >= PI {
        random_rotation_with(rng)
    } else {
        let axis = unit_vector(rng);
        Rotation::from_axis_angle(&axis, rng.random::<f64>() * spec.rotation_max)
    };
    let m = spec.translation_max;
    let t = Vector3::from_fn(|_, _| (rng.random::<f64>() * 2.0 - 1.0) * m);
    RigidTransform::new(r, t)
}

struct Crop {
    ip: Vec<usize>,
    iq: Vec<usize>,
    overlap: f64,
}

fn crop_at(p: &PointCloud, q: &PointCloud, t: &RigidTransform, ratio: f64, radius: f64, seed: u64) -> Result<Crop> {
    let (ip, iq) = random_crop_indices(p, q, t, ratio, radius, seed).stage("scene crop")?;
    let overlap = overlap_ratio(&p.select(&ip), &q.select(&iq), t, radius).stage("scene crop")?;
    Ok(Crop { ip, iq, overlap })
}

const OVERLAP_TOLERANCE: f64 = 0.02;
const MAX_CROP_RATIO: f64 = 0.9;

/// Bisects the crop ratio under fixed cut directions; redraws directions when the target is
/// out of reach for the current pair of planes.
fn crop_to_overlap(
    rng: &mut ChaCha8Rng,
    p: &PointCloud,
    q: &PointCloud,
    t: &RigidTransform,
    target: f64,
    radius: f64,
) -> Result<Crop> {
    let mut closest: Option<f64> = None;
    let mut note = |o: f64| {
        if closest.is_none_or(|c| (o - target).abs() < (c - target).abs()) {
            closest = Some(o);
        }
    };
    for _ in 0..32 {
        let seed = rng.random::<u64>();
        let far = crop_at(p, q, t, MAX_CROP_RATIO, radius, seed)?;
        note(far.overlap);
        if far.overlap > target + OVERLAP_TOLERANCE {
            continue;
        }
        if (far.overlap - target).abs() <= OVERLAP_TOLERANCE {
            return Ok(far);
        }
        let (mut lo, mut hi) = (0.0, MAX_CROP_RATIO);
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            let c = crop_at(p, q, t, mid, radius, seed)?;
            note(c.overlap);
            if (c.overlap - target).abs() <= OVERLAP_TOLERANCE {
                return Ok(c);
            }
            if c.overlap > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Err(CliError::input(format!(
        "overlap target {target} unreachable; closest achieved {:.4}",
        closest.unwrap_or(1.0)
    )))
}

fn add_noise(rng: &mut ChaCha8Rng, pts: &mut [Point3], sigma: f64) {
    if sigma == 0.0 {
        return;
    }
    let d = Normal::new(0.0, sigma).expect("sigma validated");
    for p in pts {
        *p += Vector3::from_fn(|_, _| d.sample(rng));
    }
}

/// Deterministic pair for `(spec, seed)`: sample a surface, duplicate it under a random rigid
/// motion, crop, then perturb both sides independently.
pub fn gen_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = PointCloud::new(sample_surface(&mut rng, spec)).stage("scene")?;
    let t_gt = sample_motion(&mut rng, spec);
    let moved = parereg_core::geom::apply_transform(&base, &t_gt);
    let all: Vec<usize> = (0..base.len()).collect();
    let crop = match spec.overlap {
        Some(target) if target < 1.0 => crop_to_overlap(&mut rng, &base, &moved, &t_gt, target, spec.overlap_radius)?,
        _ if spec.overlap.is_none() && spec.crop_ratio > 0.0 => {
            let s = rng.random::<u64>();
            crop_at(&base, &moved, &t_gt, spec.crop_ratio, spec.overlap_radius, s)?
        }
        _ => Crop {
            ip: all.clone(),
            iq: all,
            overlap: 1.0,
        },
    };
    let position: BTreeMap<usize, usize> = crop.iq.iter().enumerate().map(|(j, &k)| (k, j)).collect();
    let gt_pairs = crop
        .ip
        .iter()
        .enumerate()
        .filter_map(|(i, k)| position.get(k).map(|&j| (i, j)))
        .collect();
    let mut p = base.select(&crop.ip).into_points();
    let mut q = moved.select(&crop.iq).into_points();
    add_noise(&mut rng, &mut p, spec.noise);
    add_noise(&mut rng, &mut q, spec.noise);
    Ok(Scene {
        p: PointCloud::new(p).stage("scene")?,
        q: PointCloud::new(q).stage("scene")?,
        t_gt,
        gt_pairs,
        overlap: crop.overlap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    pub channels: usize,
    /// Standard deviation of the noise added to target features.
    pub feature_noise: f64,
    pub correspondences: usize,
    pub inlier_ratio: f64,
    /// Outliers are rejected unless their ground-truth residual is at least this, metres.
    pub outlier_margin: f64,
    /// Edge of the cubic cells that group correspondences into patches, metres.
    pub patch_size: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self::indoor()
    }
}

impl OracleSpec {
    pub fn indoor() -> Self {
        Self {
            channels: 8,
            feature_noise: 0.01,
            correspondences: 250,
            inlier_ratio: 0.3,
            outlier_margin: 0.2,
            patch_size: 0.4,
        }
    }

    pub fn outdoor() -> Self {
        Self {
            outlier_margin: 1.2,
            patch_size: 8.0,
            ..Self::indoor()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::input(format!("config.oracle: {m}")));
        if self.channels < 2 || self.correspondences == 0 {
            return bad("needs at least 2 channels and 1 correspondence");
        }
        if !(0.0..=1.0).contains(&self.inlier_ratio) {
            return bad("inlier ratio must lie in [0, 1]");
        }
        if !(self.feature_noise >= 0.0 && self.outlier_margin >= 0.0 && self.patch_size > 0.0) {
            return bad("noise and margin must be non-negative, patch size positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OracleCorrespondences {
    pub set: CorrespondenceSet,
    /// Scene indices `(i, j)` of every correspondence.
    pub indices: Vec<(usize, usize)>,
    pub inlier: Vec<bool>,
}

fn random_feature(rng: &mut ChaCha8Rng, c: usize) -> VectorFeature<f64> {
    VectorFeature::from_matrix(DMatrix::from_fn(c, 3, |_, _| StandardNormal.sample(rng))).expect("three columns")
}

/// Mixed inlier/outlier correspondences with ground-truth-consistent features on inliers
/// (`F_q = F_p R^T + noise`) and unrelated features on outliers, in random order.
pub fn oracle_correspondences(scene: &Scene, spec: &OracleSpec, seed: u64) -> Result<OracleCorrespondences> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.correspondences;
    let n_in = (spec.inlier_ratio * n as f64).round() as usize;
    if scene.gt_pairs.len() < n_in {
        return Err(CliError::input(format!(
            "oracle needs {n_in} inliers but the scene has {} ground-truth pairs",
            scene.gt_pairs.len()
        )));
    }
    let mut entries: Vec<((usize, usize), bool)> = scene
        .gt_pairs
        .choose_multiple(&mut rng, n_in)
        .map(|&ij| (ij, true))
        .collect();
    let margin = spec.outlier_margin;
    let mut tries = 0usize;
    while entries.len() < n {
        tries += 1;
        if tries > 1000 * n {
            return Err(CliError::input("could not place oracle outliers beyond the margin"));
        }
        let (i, j) = (rng.random_range(0..scene.p.len()), rng.random_range(0..scene.q.len()));
        if (scene.t_gt.apply(&scene.p[i]) - scene.q[j]).norm() >= margin {
            entries.push(((i, j), false));
        }
    }
    entries.shuffle(&mut rng);
    let noise = Normal::new(0.0, spec.feature_noise).expect("noise validated");
    let feats = entries
        .iter()
        .map(|&(_, inlier)| {
            let fp = random_feature(&mut rng, spec.channels);
            let fq = if inlier {
                let mut f = fp.rotated(&scene.t_gt.r);
                if spec.feature_noise > 0.0 {
                    let m = f.as_matrix().map(|v| v + noise.sample(&mut rng));
                    f = VectorFeature::from_matrix(m).expect("three columns");
                }
                f
            } else {
                random_feature(&mut rng, spec.channels)
            };
            (fp, fq)
        })
        .collect();
    let src: Vec<Point3> = entries.iter().map(|&((i, _), _)| scene.p[i]).collect();
    let dst: Vec<Point3> = entries.iter().map(|&((_, j), _)| scene.q[j]).collect();
    let cell = |p: &Point3| p.map(|v| (v / spec.patch_size).floor() as i64);
    let keys: BTreeMap<(i64, i64, i64), usize> = src
        .iter()
        .map(|p| {
            let c = cell(p);
            ((c.x, c.y, c.z), 0)
        })
        .collect::<BTreeMap<_, _>>()
        .into_keys()
        .enumerate()
        .map(|(id, k)| (k, id))
        .collect();
    let patches = src
        .iter()
        .map(|p| {
            let c = cell(p);
            keys[&(c.x, c.y, c.z)]
        })
        .collect();
    let set = CorrespondenceSet::new(src, dst)
        .and_then(|s| s.with_features(feats))
        .and_then(|s| s.with_patches(patches))
        .stage("oracle")?;
    Ok(OracleCorrespondences {
        set,
        indices: entries.iter().map(|e| e.0).collect(),
        inlier: entries.iter().map(|e| e.1).collect(),
    })
}
