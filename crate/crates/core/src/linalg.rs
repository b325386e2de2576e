//! Dependency-free 3x3 SVD: cyclic Jacobi on `H^T H`, then left vectors rebuilt from `H V`.

use nalgebra::{Matrix3, Vector3};

use crate::geom::Rotation;

const MAX_SWEEPS: usize = 30;
const OFF_DIAGONAL_TOL: f64 = 1e-14;
const NEWTON_STEPS: usize = 3;

/// Singular values ratio below which a 3x3 cross-covariance is treated as rank < 2.
pub const RANK_TOL: f64 = 1e-9;

/// `H = U diag(s) V^T` with `s` descending and `U`, `V` orthogonal.
#[derive(Debug, Clone, Copy)]
pub struct Svd3 {
    pub u: Matrix3<f64>,
    pub s: Vector3<f64>,
    pub v: Matrix3<f64>,
}

/// Eigen-decomposition of a symmetric 3x3 matrix. Returns eigenvalues (unsorted) and
/// eigenvectors as columns.
pub fn jacobi_eigen_symmetric(a: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let mut a = *a;
    let mut v = Matrix3::identity();
    let scale = a.norm();
    if scale == 0.0 {
        return (Vector3::zeros(), v);
    }
    for _ in 0..MAX_SWEEPS {
        let off = (a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2)).sqrt();
        if off <= OFF_DIAGONAL_TOL * scale {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A <- J^T A J with J the (p, q) Givens rotation.
            let mut j = Matrix3::identity();
            j[(p, p)] = c;
            j[(q, q)] = c;
            j[(p, q)] = s;
            j[(q, p)] = -s;
            a = j.transpose() * a * j;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= j;
        }
    }
    (a.diagonal(), v)
}

fn any_orthogonal(u: &Vector3<f64>) -> Vector3<f64> {
    let axis = if u.x.abs() <= u.y.abs() && u.x.abs() <= u.z.abs() {
        Vector3::x()
    } else if u.y.abs() <= u.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    u.cross(&axis).normalize()
}

pub fn svd3(h: &Matrix3<f64>) -> Svd3 {
    let (evals, evecs) = jacobi_eigen_symmetric(&(h.transpose() * h));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| evals[b].total_cmp(&evals[a]));
    let mut v = Matrix3::from_columns(&[
        evecs.column(order[0]).into_owned(),
        evecs.column(order[1]).into_owned(),
        evecs.column(order[2]).into_owned(),
    ]);
    if v.determinant() < 0.0 {
        v.set_column(2, &(-v.column(2)));
    }

    // Singular values are taken from |H v_i| rather than sqrt(eigenvalue): the latter loses
    // half the digits for small values and would hide rank deficiency.
    let hv0 = h * v.column(0);
    let n0 = hv0.norm();
    if n0 == 0.0 {
        return Svd3 {
            u: Matrix3::identity(),
            s: Vector3::zeros(),
            v,
        };
    }
    let u0 = hv0 / n0;
    let hv1 = h * v.column(1);
    let r1 = hv1 - u0 * u0.dot(&hv1);
    let r1n = r1.norm();
    let (u1, s1) = if r1n > f64::EPSILON * n0 {
        let u1 = r1 / r1n;
        (u1, u1.dot(&hv1))
    } else {
        (any_orthogonal(&u0), 0.0)
    };
    let mut u2 = u0.cross(&u1);
    let hv2 = h * v.column(2);
    if hv2.dot(&u2) < 0.0 {
        u2 = -u2;
    }
    Svd3 {
        u: Matrix3::from_columns(&[u0, u1, u2]),
        s: Vector3::new(n0, s1, hv2.dot(&u2)),
        v,
    }
}

/// Proper rotation `R` maximising `tr(R H)` for `H = sum_i a_i b_i^T`, i.e. the rotation
/// best mapping the `a_i` onto the `b_i`. `None` when the second singular value falls below
/// [`RANK_TOL`] times the first.
pub fn kabsch_rotation(h: &Matrix3<f64>) -> Option<Rotation> {
    let svd = svd3(h);
    if !(svd.s[0] > 0.0) || svd.s[1] < RANK_TOL * svd.s[0] {
        return None;
    }
    let d = (svd.v * svd.u.transpose()).determinant().signum();
    let mut r = svd.v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * svd.u.transpose();
    // The eigen route squares the conditioning; Newton steps on tr(R H) over SO(3) recover
    // the digits lost when singular values are close.
    for _ in 0..NEWTON_STEPS {
        let m = r * h;
        let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5;
        let hessian = Matrix3::identity() * m.trace() - (m + m.transpose()) * 0.5;
        let Some(chol) = hessian.cholesky() else { break };
        let omega = chol.solve(&skew) * -2.0;
        if !(omega.norm() > f64::EPSILON * 1e-2) {
            break;
        }
        r = nalgebra::Rotation3::new(omega).into_inner() * r;
    }
    Some(Rotation::new_unchecked(r))
}
