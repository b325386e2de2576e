//! Vector-neuron algebra.
//!
//! A [`VectorFeature`] is a `C x 3` matrix; rotating the cloud by `R` maps it to `F R^T`.
//! Linear maps act on the channel axis from the left, so they commute with the rotation.

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, Vector3};
use rand::Rng;

use crate::geom::Rotation;
use crate::params::{join, uniform, Parameters};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VectorFeature<T: Real> {
    m: DMatrix<T>,
}

impl<T: Real> VectorFeature<T> {
    pub fn from_matrix(m: DMatrix<T>) -> Result<Self> {
        if m.ncols() != 3 {
            return Err(Error::dims("vector feature columns", 3, m.ncols()));
        }
        Ok(Self { m })
    }

    pub fn from_rows(rows: &[Vector3<T>]) -> Self {
        let mut m = DMatrix::zeros(rows.len(), 3);
        for (c, r) in rows.iter().enumerate() {
            m.set_row(c, &r.transpose());
        }
        Self { m }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            m: DMatrix::zeros(channels, 3),
        }
    }

    /// Zero-channel feature, the neutral element of [`vn_concat`].
    pub fn empty() -> Self {
        Self::zeros(0)
    }

    pub fn channels(&self) -> usize {
        self.m.nrows()
    }

    pub fn row(&self, c: usize) -> Vector3<T> {
        Vector3::new(self.m[(c, 0)], self.m[(c, 1)], self.m[(c, 2)])
    }

    pub fn set_row(&mut self, c: usize, v: &Vector3<T>) {
        self.m.set_row(c, &RowVector3::new(v.x, v.y, v.z));
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.m
    }

    /// `F R^T`: the feature of the rotated cloud.
    pub fn rotated(&self, r: &Rotation) -> Self {
        let rt: Matrix3<T> = r.matrix().transpose().map(T::of_f64);
        let mut m = DMatrix::zeros(self.channels(), 3);
        m.gemm(T::one(), &self.m, &rt, T::zero());
        Self { m }
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { m: &self.m * s }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.channels() != other.channels() {
            return Err(Error::dims("vector feature add", self.channels(), other.channels()));
        }
        Ok(Self { m: &self.m + &other.m })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.channels() != other.channels() {
            return Err(Error::dims("vector feature sub", self.channels(), other.channels()));
        }
        Ok(Self { m: &self.m - &other.m })
    }

    pub fn frobenius(&self) -> f64 {
        self.m.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
    }

    pub fn cast<U: Real>(&self) -> VectorFeature<U> {
        VectorFeature {
            m: self.m.map(|v| U::of_f64(v.as_f64())),
        }
    }
}

/// Rotation-invariant descriptor of length `3C`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantFeature<T: Real> {
    pub v: DVector<T>,
}

impl<T: Real> InvariantFeature<T> {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        self.v.as_slice()
    }
}

/// Channel-mixing matrix `W` (`C' x C`).
#[derive(Debug, Clone, PartialEq)]
pub struct VnLinear<T: Real> {
    pub w: DMatrix<T>,
}

impl<T: Real> VnLinear<T> {
    pub fn new(w: DMatrix<T>) -> Self {
        Self { w }
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: DMatrix::zeros(out, inp),
        }
    }

    pub fn identity(c: usize) -> Self {
        Self {
            w: DMatrix::identity(c, c),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, out: usize, inp: usize) -> Self {
        Self {
            w: uniform(rng, out, inp, (3.0 / inp.max(1) as f64).sqrt()),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_channels(&self) -> usize {
        self.w.nrows()
    }
}

impl<T: Real> Parameters<T> for VnLinear<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        f(&join(prefix, "w"), &mut self.w);
    }
}

/// VN-ReLU with one learned direction predictor `u` (`1 x C`) shared by all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct VnNonlinearity<T: Real> {
    pub u: DMatrix<T>,
}

impl<T: Real> VnNonlinearity<T> {
    pub fn new(u: DMatrix<T>) -> Self {
        Self { u }
    }

    /// Zero direction: the layer is the identity.
    pub fn passthrough(c: usize) -> Self {
        Self {
            u: DMatrix::zeros(1, c),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, c: usize) -> Self {
        Self {
            u: uniform(rng, 1, c, (3.0 / c.max(1) as f64).sqrt()),
        }
    }
}

impl<T: Real> Parameters<T> for VnNonlinearity<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        f(&join(prefix, "u"), &mut self.u);
    }
}

pub fn vn_linear<T: Real>(layer: &VnLinear<T>, f: &VectorFeature<T>) -> Result<VectorFeature<T>> {
    if layer.in_channels() != f.channels() {
        return Err(Error::dims(
            "vn_linear input channels",
            layer.in_channels(),
            f.channels(),
        ));
    }
    Ok(VectorFeature {
        m: T::matmul(&layer.w, &f.m),
    })
}

/// Stacks `f1` over `f2`.
pub fn vn_concat<T: Real>(f1: &VectorFeature<T>, f2: &VectorFeature<T>) -> VectorFeature<T> {
    let (a, b) = (f1.channels(), f2.channels());
    let mut m = DMatrix::zeros(a + b, 3);
    m.rows_mut(0, a).copy_from(&f1.m);
    m.rows_mut(a, b).copy_from(&f2.m);
    VectorFeature { m }
}

/// Projects every channel with a negative component along `d = normalize(U F)` back onto the
/// plane orthogonal to `d`.
pub fn vn_relu<T: Real>(layer: &VnNonlinearity<T>, f: &VectorFeature<T>) -> Result<VectorFeature<T>> {
    if layer.u.ncols() != f.channels() || layer.u.nrows() != 1 {
        return Err(Error::dims("vn_relu direction width", f.channels(), layer.u.ncols()));
    }
    let d = T::matmul(&layer.u, &f.m);
    let norm = d.norm();
    if norm == T::zero() {
        return Ok(f.clone());
    }
    let d = Vector3::new(d[0], d[1], d[2]) / norm;
    let mut out = f.clone();
    for c in 0..f.channels() {
        let v = f.row(c);
        let dot = v.dot(&d);
        if dot < T::zero() {
            out.set_row(c, &(v - d * dot));
        }
    }
    Ok(out)
}

/// Scales each non-zero channel to unit length.
pub fn l2_normalize<T: Real>(f: &VectorFeature<T>) -> VectorFeature<T> {
    let mut out = f.clone();
    for c in 0..f.channels() {
        let v = f.row(c);
        let n = v.norm();
        if n > T::zero() {
            out.set_row(c, &(v / n));
        }
    }
    out
}

pub fn vn_magnitudes<T: Real>(f: &VectorFeature<T>) -> DVector<T> {
    DVector::from_fn(f.channels(), |c, _| f.row(c).norm())
}

pub fn vn_mean_pool<T: Real>(set: &[VectorFeature<T>]) -> Result<VectorFeature<T>> {
    let first = set
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean pool over an empty set".into()))?;
    let mut acc = DMatrix::zeros(first.channels(), 3);
    for f in set {
        if f.channels() != first.channels() {
            return Err(Error::dims("vn_mean_pool channels", first.channels(), f.channels()));
        }
        acc += &f.m;
    }
    Ok(VectorFeature {
        m: acc / T::of_f64(set.len() as f64),
    })
}

/// Predicts an equivariant 3-channel frame `T` and returns `flatten(F T^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VnInvariantHead<T: Real> {
    pub layers: [VnLinear<T>; 3],
    pub relus: [VnNonlinearity<T>; 2],
}

impl<T: Real> VnInvariantHead<T> {
    /// Widths `C -> max(C/2, 3) -> max(C/4, 3) -> 3`.
    pub fn widths(c: usize) -> [usize; 4] {
        [c, (c / 2).max(3), (c / 4).max(3), 3]
    }

    pub fn zeros(c: usize) -> Self {
        let w = Self::widths(c);
        Self {
            layers: [
                VnLinear::zeros(w[1], w[0]),
                VnLinear::zeros(w[2], w[1]),
                VnLinear::zeros(w[3], w[2]),
            ],
            relus: [VnNonlinearity::passthrough(w[1]), VnNonlinearity::passthrough(w[2])],
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, c: usize) -> Self {
        let w = Self::widths(c);
        Self {
            layers: [
                VnLinear::random(rng, w[1], w[0]),
                VnLinear::random(rng, w[2], w[1]),
                VnLinear::random(rng, w[3], w[2]),
            ],
            relus: [VnNonlinearity::random(rng, w[1]), VnNonlinearity::random(rng, w[2])],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn frame(&self, f: &VectorFeature<T>) -> Result<VectorFeature<T>> {
        let h = vn_relu(&self.relus[0], &vn_linear(&self.layers[0], f)?)?;
        let h = vn_relu(&self.relus[1], &vn_linear(&self.layers[1], &h)?)?;
        vn_linear(&self.layers[2], &h)
    }
}

impl<T: Real> Parameters<T> for VnInvariantHead<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("linear{i}")), f);
        }
        for (i, r) in self.relus.iter_mut().enumerate() {
            r.visit_mut(&join(prefix, &format!("relu{i}")), f);
        }
    }
}

pub fn vn_invariant<T: Real>(head: &VnInvariantHead<T>, f: &VectorFeature<T>) -> Result<InvariantFeature<T>> {
    let frame = head.frame(f)?;
    let g = T::matmul(&f.m, &frame.m.transpose());
    // Row-major flatten: channel c contributes its three frame coordinates.
    let c = f.channels();
    Ok(InvariantFeature {
        v: DVector::from_fn(3 * c, |i, _| g[(i / 3, i % 3)]),
    })
}
