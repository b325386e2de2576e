use std::borrow::Cow;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{relu, softmax, Dense};
use crate::geom::{Point3, PointCloud};
use crate::params::{join, uniform, Parameters};
use crate::real::mul_acc_f64;
use crate::vn::{VectorFeature, VnLinear, VnNonlinearity};
use crate::{Error, Real, Result};

/// Whether a convolution mixes neighbour features `F_j` or edge features `[F_j - F_i ; F_j]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    Node,
    #[default]
    Edge,
}

impl ConvMode {
    pub fn input_width(self, channels: usize) -> usize {
        match self {
            ConvMode::Node => channels,
            ConvMode::Edge => 2 * channels,
        }
    }
}

/// Shadow kernel weights `W_k`, each `C' x C` (node) or `C' x 2C` (edge).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank<T: Real> {
    pub weights: Vec<DMatrix<T>>,
}

impl<T: Real> KernelBank<T> {
    pub fn zeros(k: usize, out: usize, inp: usize) -> Self {
        Self {
            weights: vec![DMatrix::zeros(out, inp); k],
        }
    }

    /// Uniform in `[-a, a]` with `a = sqrt(3 / (C K))`, `C` the matrix input width.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, k: usize, out: usize, inp: usize) -> Self {
        let a = (3.0 / (inp.max(1) * k.max(1)) as f64).sqrt();
        Self {
            weights: (0..k).map(|_| uniform(rng, out, inp, a)).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn out_channels(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn in_width(&self) -> usize {
        self.weights[0].ncols()
    }
}

impl<T: Real> Parameters<T> for KernelBank<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        for (i, w) in self.weights.iter_mut().enumerate() {
            f(&join(prefix, &format!("w{i}")), w);
        }
    }
}

/// Mini-network predicting rotation-invariant kernel correlation scores from the equivariant
/// spatial statistics of one neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationNet<T: Real> {
    pub vn_layers: Vec<(VnLinear<T>, VnNonlinearity<T>)>,
    pub mlp: Vec<Dense<T>>,
}

impl<T: Real> CorrelationNet<T> {
    /// VN-MLP `3 -> dim -> dim`, magnitudes, MLP `dim -> hidden -> k`.
    pub fn zeros(dim: usize, hidden: usize, k: usize) -> Self {
        Self {
            vn_layers: vec![
                (VnLinear::zeros(dim, 3), VnNonlinearity::passthrough(dim)),
                (VnLinear::zeros(dim, dim), VnNonlinearity::passthrough(dim)),
            ],
            mlp: vec![Dense::zeros(hidden, dim), Dense::zeros(k, hidden)],
        }
    }

    /// Random hidden layers; the output layer is zero so initial scores are uniform.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dim: usize, hidden: usize, k: usize) -> Self {
        Self {
            vn_layers: vec![
                (VnLinear::random(rng, dim, 3), VnNonlinearity::random(rng, dim)),
                (VnLinear::random(rng, dim, dim), VnNonlinearity::random(rng, dim)),
            ],
            mlp: vec![Dense::random(rng, hidden, dim), Dense::zeros(k, hidden)],
        }
    }

    pub fn k(&self) -> usize {
        self.mlp.last().map_or(0, |l| l.out_dim())
    }
}

impl<T: Real> Parameters<T> for CorrelationNet<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        for (i, (lin, act)) in self.vn_layers.iter_mut().enumerate() {
            lin.visit_mut(&join(prefix, &format!("vn{i}.linear")), f);
            act.visit_mut(&join(prefix, &format!("vn{i}.relu")), f);
        }
        for (i, d) in self.mlp.iter_mut().enumerate() {
            d.visit_mut(&join(prefix, &format!("mlp{i}")), f);
        }
    }
}

/// One position-aware convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T: Real> {
    pub bank: KernelBank<T>,
    pub net: CorrelationNet<T>,
    pub mode: ConvMode,
}

impl<T: Real> ConvLayer<T> {
    pub fn in_channels(&self) -> usize {
        match self.mode {
            ConvMode::Node => self.bank.in_width(),
            ConvMode::Edge => self.bank.in_width() / 2,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.bank.out_channels()
    }
}

impl<T: Real> Parameters<T> for ConvLayer<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        self.bank.visit_mut(&join(prefix, "bank"), f);
        self.net.visit_mut(&join(prefix, "corr"), f);
    }
}

/// Per-neighbour statistics `[p_ij, mean_j p_ij, p_ij x mean_j p_ij]` with `p_ij = p_j - p_i`.
pub fn spatial_stats<T: Real>(center: &Point3, neighbors: &[Point3]) -> Result<Vec<VectorFeature<T>>> {
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighborhood(0));
    }
    let rel: Vec<Vector3<T>> = neighbors.iter().map(|p| (p - center).map(T::of_f64)).collect();
    let mean = rel.iter().fold(Vector3::zeros(), |a, r| a + r) / T::of_f64(rel.len() as f64);
    Ok(rel
        .iter()
        .map(|r| VectorFeature::from_rows(&[*r, mean, r.cross(&mean)]))
        .collect())
}

/// Softmax over `MLP(|VN-MLP(stats)|)`; positive entries summing to one.
pub fn correlation_scores<T: Real>(net: &CorrelationNet<T>, stats: &VectorFeature<T>) -> Result<DVector<T>> {
    let g = correlation_scores_batch(net, std::slice::from_ref(stats))?;
    Ok(g.column(0).into_owned())
}

/// [`correlation_scores`] for every neighbour at once; column `j` scores `stats[j]`.
pub fn correlation_scores_batch<T: Real>(net: &CorrelationNet<T>, stats: &[VectorFeature<T>]) -> Result<DMatrix<T>> {
    let n = stats.len();
    // Neighbour j occupies columns 3j..3j+3.
    let mut h = DMatrix::zeros(3, 3 * n);
    for (j, s) in stats.iter().enumerate() {
        if s.channels() != 3 {
            return Err(Error::dims("spatial statistics channels", 3, s.channels()));
        }
        h.columns_mut(3 * j, 3).copy_from(s.as_matrix());
    }
    for (lin, act) in &net.vn_layers {
        if lin.w.ncols() != h.nrows() {
            return Err(Error::dims("vn_linear input channels", lin.w.ncols(), h.nrows()));
        }
        h = T::matmul(&lin.w, &h);
        if act.u.ncols() != h.nrows() || act.u.nrows() != 1 {
            return Err(Error::dims("vn_relu direction width", h.nrows(), act.u.ncols()));
        }
        let d = T::matmul(&act.u, &h);
        for j in 0..n {
            let dj = Vector3::new(d[3 * j], d[3 * j + 1], d[3 * j + 2]);
            let norm = dj.norm();
            if norm == T::zero() {
                continue;
            }
            let dj = dj / norm;
            for c in 0..h.nrows() {
                let v = Vector3::new(h[(c, 3 * j)], h[(c, 3 * j + 1)], h[(c, 3 * j + 2)]);
                let dot = v.dot(&dj);
                if dot < T::zero() {
                    for (e, x) in (v - dj * dot).iter().enumerate() {
                        h[(c, 3 * j + e)] = *x;
                    }
                }
            }
        }
    }
    let mut x = DMatrix::from_fn(h.nrows(), n, |c, j| {
        Vector3::new(h[(c, 3 * j)], h[(c, 3 * j + 1)], h[(c, 3 * j + 2)]).norm()
    });
    let last = net.mlp.len().saturating_sub(1);
    for (i, layer) in net.mlp.iter().enumerate() {
        if layer.in_dim() != x.nrows() {
            return Err(Error::dims("dense input", layer.in_dim(), x.nrows()));
        }
        x = &layer.w * &x;
        for mut col in x.column_iter_mut() {
            col += layer.b.column(0);
            if i < last {
                col.apply(|v| *v = relu(*v));
            }
        }
    }
    for mut col in x.column_iter_mut() {
        let p = softmax(col.as_slice());
        col.copy_from_slice(&p);
    }
    Ok(x)
}

/// Convolution at one centre: `sum_j sum_k gamma_jk W_k Phi_j`.
///
/// `neighbors` index into `support` and `features`; `center_feature` is `F_i` for edge mode.
/// The sum is evaluated as `sum_k W_k (sum_j gamma_jk Phi_j)`.
pub fn pare_conv<T: Real>(
    layer: &ConvLayer<T>,
    center: &Point3,
    center_feature: &VectorFeature<T>,
    neighbors: &[usize],
    support: &PointCloud,
    features: &[VectorFeature<T>],
) -> Result<VectorFeature<T>> {
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighborhood(0));
    }
    if layer.net.k() != layer.bank.k() {
        return Err(Error::dims(
            "correlation net output width",
            layer.bank.k(),
            layer.net.k(),
        ));
    }
    let c = layer.in_channels();
    if center_feature.channels() != c {
        return Err(Error::dims(
            "pare_conv centre feature channels",
            c,
            center_feature.channels(),
        ));
    }
    let pts: Vec<Point3> = neighbors.iter().map(|&j| support[j]).collect();
    let stats = spatial_stats::<T>(center, &pts)?;
    let width = layer.mode.input_width(c);
    // Accumulated in double whatever `T` is; the result is rounded once.
    let mut agg = vec![DMatrix::<f64>::zeros(width, 3); layer.bank.k()];
    let fi = T::f64_matrix(center_feature.as_matrix());
    let gammas = correlation_scores_batch(&layer.net, &stats)?;
    for (&j, gamma) in neighbors.iter().zip(gammas.column_iter()) {
        let fj = &features[j];
        if fj.channels() != c {
            return Err(Error::dims("pare_conv neighbour feature channels", c, fj.channels()));
        }
        let fj = T::f64_matrix(fj.as_matrix());
        let phi = match layer.mode {
            ConvMode::Node => fj,
            ConvMode::Edge => {
                let mut phi = DMatrix::zeros(2 * c, 3);
                phi.rows_mut(0, c).copy_from(&(&*fj - &*fi));
                phi.rows_mut(c, c).copy_from(&*fj);
                Cow::Owned(phi)
            }
        };
        for (a, g) in agg.iter_mut().zip(gamma.iter()) {
            let g = g.as_f64();
            a.zip_apply(&*phi, |x, y| *x += g * y);
        }
    }
    let mut out = DMatrix::<f64>::zeros(layer.out_channels(), 3);
    for (w, a) in layer.bank.weights.iter().zip(&agg) {
        mul_acc_f64(&mut out, w, a);
    }
    VectorFeature::from_matrix(out.map(T::of_f64))
}
