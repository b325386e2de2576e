use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud};
use crate::{Error, Result};

const ROTATION_TOL: f64 = 1e-6;

/// Proper rotation matrix (`R^T R = I`, `det R = +1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality and orientation to 1e-6.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("rotation has non-finite entries".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidArgument(format!(
                "not a rotation (orthogonality error {ortho:.3e}, det {det:.6})"
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix the caller guarantees is a rotation (e.g. an SVD product).
    pub(crate) fn new_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Rotation(*nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix())
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Geodesic distance in radians.
    ///
    /// Evaluated as `atan2(|vee(R - R^T)| / 2, (tr R - 1) / 2)` on `R = self^T other`, which
    /// equals `arccos((tr - 1) / 2)` but keeps full precision for tiny angles.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let d = self.0.transpose() * other.0;
        let c = (d.trace() - 1.0) * 0.5;
        let s = Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm() * 0.5;
        s.atan2(c)
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub r: Rotation,
    pub t: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(r: Rotation, t: Vector3<f64>) -> Self {
        Self { r, t }
    }

    pub fn identity() -> Self {
        Self {
            r: Rotation::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            r: Rotation::identity(),
            t,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.r.rotate(p) + self.t
    }

    pub fn inverse(&self) -> Self {
        let rt = self.r.transpose();
        Self {
            r: rt,
            t: -(rt.rotate(&self.t)),
        }
    }

    /// Rotation error in radians and translation error in meters against `other`.
    pub fn errors_to(&self, other: &RigidTransform) -> (f64, f64) {
        (self.r.angle_to(&other.r), (self.t - other.t).norm())
    }
}

#[derive(Serialize, Deserialize)]
struct TransformJson {
    r: [f64; 9],
    t: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TransformJson {
            r: self.r.to_row_major(),
            t: [self.t.x, self.t.y, self.t.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = TransformJson::deserialize(d)?;
        let r = Rotation::from_row_major(&raw.r).map_err(serde::de::Error::custom)?;
        Ok(RigidTransform::new(r, Vector3::from(raw.t)))
    }
}

/// Applies `t1` then `t2`: `R = R2 R1`, `t = R2 t1 + t2`.
pub fn compose(t2: &RigidTransform, t1: &RigidTransform) -> RigidTransform {
    RigidTransform {
        r: t2.r * t1.r,
        t: t2.r.rotate(&t1.t) + t2.t,
    }
}

pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    PointCloud::new(cloud.iter().map(|p| t.apply(p)).collect()).expect("rigid motion of finite points is finite")
}

/// Haar-uniform rotation from a seed (unit quaternion construction).
pub fn random_rotation(seed: u64) -> Rotation {
    random_rotation_with(&mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_rotation_with<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y, z, w) = (
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
        b * (tau * u3).cos(),
    );
    let m = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    );
    Rotation(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_transform(seed: u64) -> RigidTransform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_rotation_with(&mut rng);
        let t = Vector3::new(rng.random(), rng.random(), rng.random()) * 4.0 - Vector3::repeat(2.0);
        RigidTransform::new(r, t)
    }

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
    fn identity_leaves_cloud_unchanged() {
        let c = random_cloud(1, 20);
        assert_eq!(apply_transform(&c, &RigidTransform::identity()), c);
    }

    #[test]
    fn pure_translation_shifts_x() {
        let c = random_cloud(2, 20);
        let moved = apply_transform(&c, &RigidTransform::from_translation(Vector3::x()));
        for (a, b) in c.iter().zip(moved.iter()) {
            assert_eq!(b.x, a.x + 1.0);
            assert_eq!((b.y, b.z), (a.y, a.z));
        }
    }

    #[test]
    fn compose_matches_sequential_application() {
        for seed in 0..20 {
            let (t1, t2) = (random_transform(seed), random_transform(seed + 100));
            let c = random_cloud(seed, 50);
            let once = apply_transform(&c, &compose(&t2, &t1));
            let twice = apply_transform(&apply_transform(&c, &t1), &t2);
            for (a, b) in once.iter().zip(twice.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let t = random_transform(7);
        let same = compose(&t, &RigidTransform::identity());
        assert_eq!(same, t);
        let id = compose(&t, &t.inverse());
        assert!((id.r.matrix() - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.t.norm() < 1e-12);
    }

    #[test]
    fn random_rotation_is_reproducible_and_valid() {
        let a = random_rotation(42);
        let b = random_rotation(42);
        assert_eq!(a.to_row_major(), b.to_row_major());
        assert!(Rotation::new(*a.matrix()).is_ok());
    }

    #[test]
    fn random_rotation_trace_has_zero_mean() {
        // Haar measure: E[tr R] = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| random_rotation_with(&mut rng).matrix().trace())
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 0.05, "mean trace {mean}");
    }

    #[test]
    fn angle_to_is_accurate_for_small_and_large_angles() {
        let axis = Vector3::new(1.0, 2.0, -0.5);
        for &angle in &[1e-12, 1e-6, 0.3, 2.0, std::f64::consts::PI] {
            let r = Rotation::from_axis_angle(&axis, angle);
            let got = Rotation::identity().angle_to(&r);
            assert!((got - angle).abs() < 1e-12 * angle.max(1.0), "{angle} vs {got}");
        }
    }

    #[test]
    fn preserves_pairwise_distances() {
        let c = random_cloud(3, 30);
        let t = random_transform(3);
        let m = apply_transform(&c, &t);
        for i in 0..c.len() {
            for j in 0..c.len() {
                let d0 = (c[i] - c[j]).norm();
                let d1 = (m[i] - m[j]).norm();
                assert!((d0 - d1).abs() <= 1e-9 * d0.max(1e-12));
            }
        }
    }

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Rotation::new(m).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = random_transform(5);
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.starts_with("{\"r\":["));
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
