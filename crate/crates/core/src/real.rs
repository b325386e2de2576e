use std::borrow::Cow;

use nalgebra::{DMatrix, RealField};

/// Floating point type a network can run in. Geometry is always `f64`; features may be
/// `f32` for bulk inference.
pub trait Real: RealField + Copy + Send + Sync + std::fmt::Debug + 'static {
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Double precision view, borrowed when `Self` already is `f64`.
    fn f64_matrix(m: &DMatrix<Self>) -> Cow<'_, DMatrix<f64>>;

    /// `a * b`; single precision accumulates in double and rounds once.
    fn matmul(a: &DMatrix<Self>, b: &DMatrix<Self>) -> DMatrix<Self> {
        a * b
    }
}

impl Real for f64 {
    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn f64_matrix(m: &DMatrix<Self>) -> Cow<'_, DMatrix<f64>> {
        Cow::Borrowed(m)
    }
}

impl Real for f32 {
    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn f64_matrix(m: &DMatrix<Self>) -> Cow<'_, DMatrix<f64>> {
        Cow::Owned(m.map(f64::from))
    }

    fn matmul(a: &DMatrix<Self>, b: &DMatrix<Self>) -> DMatrix<Self> {
        let mut out = DMatrix::zeros(a.nrows(), b.ncols());
        mul_acc_f64(&mut out, a, &b.map(f64::from));
        out.map(|v| v as f32)
    }
}

/// `out += a * b` in double precision, reading `a` column by column.
pub fn mul_acc_f64<T: Real>(out: &mut DMatrix<f64>, a: &DMatrix<T>, b: &DMatrix<f64>) {
    let n = a.nrows();
    assert!(
        out.nrows() == n && a.ncols() == b.nrows() && out.ncols() == b.ncols(),
        "mul_acc_f64 shapes"
    );
    if n == 0 {
        return;
    }
    for (oc, bc) in out.as_mut_slice().chunks_exact_mut(n).zip(b.column_iter()) {
        for (ac, &s) in a.as_slice().chunks_exact(n).zip(bc.iter()) {
            if s != 0.0 {
                for (o, x) in oc.iter_mut().zip(ac) {
                    *o += x.as_f64() * s;
                }
            }
        }
    }
}
