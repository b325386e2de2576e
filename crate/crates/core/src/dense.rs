//! Real-valued layers used on rotation-invariant quantities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::params::{join, uniform, Parameters};
use crate::{Error, Real, Result};

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Real> {
    pub w: DMatrix<T>,
    pub b: DMatrix<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: DMatrix::zeros(out, inp),
            b: DMatrix::zeros(out, 1),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            w: DMatrix::identity(n, n),
            b: DMatrix::zeros(n, 1),
        }
    }

    /// Uniform weights in `[-sqrt(3/in), sqrt(3/in)]`, zero bias.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, out: usize, inp: usize) -> Self {
        Self {
            w: uniform(rng, out, inp, (3.0 / inp.max(1) as f64).sqrt()),
            b: DMatrix::zeros(out, 1),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != self.in_dim() {
            return Err(Error::dims("dense input", self.in_dim(), x.len()));
        }
        Ok(&self.w * x + self.b.column(0))
    }

    /// Applies the layer to every row of `x` (`n x in` -> `n x out`).
    pub fn forward_rows(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::dims("dense input", self.in_dim(), x.ncols()));
        }
        let mut y = x * self.w.transpose();
        for mut row in y.row_iter_mut() {
            row += self.b.column(0).transpose();
        }
        Ok(y)
    }
}

impl<T: Real> Parameters<T> for Dense<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(x: &[T]) -> Vec<T> {
    let Some(&first) = x.first() else {
        return Vec::new();
    };
    let max = x.iter().copied().fold(first, |a, b| a.max(b));
    let e: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let s = e.iter().fold(T::zero(), |a, &b| a + b);
    e.into_iter().map(|v| v / s).collect()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu<T: Real>(x: T) -> T {
    x.max(T::zero())
}
