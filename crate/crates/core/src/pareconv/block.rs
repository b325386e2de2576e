use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::conv::{pare_conv, ConvLayer, ConvMode, CorrelationNet, KernelBank};
use crate::geom::{KnnIndex, NeighborGraph, PointCloud};
use crate::params::{join, Parameters};
use crate::vn::{l2_normalize, vn_concat, vn_linear, vn_mean_pool, vn_relu, VectorFeature, VnLinear, VnNonlinearity};
use crate::{Error, Real, Result};

/// VN-Linear, L2 normalisation, VN-ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct VnBlock<T: Real> {
    pub linear: VnLinear<T>,
    pub relu: VnNonlinearity<T>,
}

impl<T: Real> VnBlock<T> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            linear: VnLinear::zeros(out, inp),
            relu: VnNonlinearity::passthrough(out),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, out: usize, inp: usize) -> Self {
        Self {
            linear: VnLinear::random(rng, out, inp),
            relu: VnNonlinearity::random(rng, out),
        }
    }

    pub fn forward(&self, f: &VectorFeature<T>) -> Result<VectorFeature<T>> {
        vn_relu(&self.relu, &l2_normalize(&vn_linear(&self.linear, f)?))
    }
}

impl<T: Real> Parameters<T> for VnBlock<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        self.linear.visit_mut(&join(prefix, "linear"), f);
        self.relu.visit_mut(&join(prefix, "relu"), f);
    }
}

/// Layer sizes of one bottleneck block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernels: usize,
    pub corr_dim: usize,
    pub corr_hidden: usize,
    pub mode: ConvMode,
}

impl BlockShape {
    pub fn mid(&self) -> usize {
        (self.out_channels / 2).max(1)
    }
}

/// Bottleneck block: conv to `C'/2`, VN-ReLU, VN block to `C'`, plus shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T: Real> {
    pub conv: ConvLayer<T>,
    pub relu: VnNonlinearity<T>,
    pub expand: VnBlock<T>,
    /// Present only when input and output widths differ.
    pub shortcut: Option<VnLinear<T>>,
}

impl<T: Real> ResBlock<T> {
    pub fn zeros(s: &BlockShape) -> Self {
        let mid = s.mid();
        Self {
            conv: ConvLayer {
                bank: KernelBank::zeros(s.kernels, mid, s.mode.input_width(s.in_channels)),
                net: CorrelationNet::zeros(s.corr_dim, s.corr_hidden, s.kernels),
                mode: s.mode,
            },
            relu: VnNonlinearity::passthrough(mid),
            expand: VnBlock::zeros(s.out_channels, mid),
            shortcut: (s.in_channels != s.out_channels).then(|| VnLinear::zeros(s.out_channels, s.in_channels)),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, s: &BlockShape) -> Self {
        let mid = s.mid();
        Self {
            conv: ConvLayer {
                bank: KernelBank::random(rng, s.kernels, mid, s.mode.input_width(s.in_channels)),
                net: CorrelationNet::random(rng, s.corr_dim, s.corr_hidden, s.kernels),
                mode: s.mode,
            },
            relu: VnNonlinearity::random(rng, mid),
            expand: VnBlock::random(rng, s.out_channels, mid),
            shortcut: (s.in_channels != s.out_channels).then(|| VnLinear::random(rng, s.out_channels, s.in_channels)),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.expand.linear.out_channels()
    }

    fn apply_one(
        &self,
        center: &nalgebra::Vector3<f64>,
        fi: &VectorFeature<T>,
        neighbors: &[usize],
        support: &PointCloud,
        features: &[VectorFeature<T>],
    ) -> Result<VectorFeature<T>> {
        let h = pare_conv(&self.conv, center, fi, neighbors, support, features)?;
        let h = vn_relu(&self.relu, &h)?;
        let h = self.expand.forward(&h)?;
        let skip = match &self.shortcut {
            Some(l) => vn_linear(l, fi)?,
            None => fi.clone(),
        };
        h.add(&skip)
    }
}

impl<T: Real> Parameters<T> for ResBlock<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.relu.visit_mut(&join(prefix, "relu"), f);
        self.expand.visit_mut(&join(prefix, "expand"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&join(prefix, "shortcut"), f);
        }
    }
}

fn check_features<T: Real>(features: &[VectorFeature<T>], support: &PointCloud, c: usize) -> Result<()> {
    if features.len() != support.len() {
        return Err(Error::dims("features per support point", support.len(), features.len()));
    }
    if let Some(f) = features.iter().find(|f| f.channels() != c) {
        return Err(Error::dims("block input channels", c, f.channels()));
    }
    Ok(())
}

/// Residual block on one level: queries and support are the same cloud and the shortcut
/// carries each point's own feature.
pub fn pare_resblock<T: Real>(
    block: &ResBlock<T>,
    cloud: &PointCloud,
    graph: &NeighborGraph,
    features: &[VectorFeature<T>],
) -> Result<Vec<VectorFeature<T>>> {
    check_features(features, cloud, block.in_channels())?;
    if graph.len() != cloud.len() {
        return Err(Error::dims("neighbour graph rows", cloud.len(), graph.len()));
    }
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let nb = graph.neighbors(i);
            if nb.is_empty() {
                return Err(Error::EmptyNeighborhood(i));
            }
            block.apply_one(&cloud[i], &features[i], nb, cloud, features)
        })
        .collect()
}

/// Residual block evaluated at sparse centres over a denser support cloud.
///
/// `members[i]` lists the support points pooled into centre `i` (its voxel); their mean
/// feature is the centre feature used by the shortcut and the edge term. Pooling by
/// membership rather than by nearest support point keeps the result independent of
/// distance ties, which voxel centroids produce systematically.
pub fn strided_block<T: Real>(
    block: &ResBlock<T>,
    centers: &PointCloud,
    support: &PointCloud,
    graph: &NeighborGraph,
    features: &[VectorFeature<T>],
    members: &[Vec<usize>],
) -> Result<Vec<VectorFeature<T>>> {
    check_features(features, support, block.in_channels())?;
    if graph.len() != centers.len() {
        return Err(Error::dims("neighbour graph rows", centers.len(), graph.len()));
    }
    if members.len() != centers.len() {
        return Err(Error::dims("member lists", centers.len(), members.len()));
    }
    (0..centers.len())
        .into_par_iter()
        .map(|i| {
            let nb = graph.neighbors(i);
            if nb.is_empty() || members[i].is_empty() {
                return Err(Error::EmptyNeighborhood(i));
            }
            let pooled: Vec<_> = members[i].iter().map(|&j| features[j].clone()).collect();
            let fi = vn_mean_pool(&pooled)?;
            block.apply_one(&centers[i], &fi, nb, support, features)
        })
        .collect()
}

/// Each dense point takes its nearest sparse feature, concatenates its skip feature, and
/// the pair is fused by `fusion`.
pub fn nearest_upsample<T: Real>(
    sparse_features: &[VectorFeature<T>],
    sparse: &PointCloud,
    dense: &PointCloud,
    skip_features: &[VectorFeature<T>],
    fusion: &VnBlock<T>,
) -> Result<Vec<VectorFeature<T>>> {
    if sparse_features.len() != sparse.len() {
        return Err(Error::dims("sparse features", sparse.len(), sparse_features.len()));
    }
    if skip_features.len() != dense.len() {
        return Err(Error::dims("skip features", dense.len(), skip_features.len()));
    }
    let nearest = KnnIndex::new(sparse)?.graph(dense, 1);
    (0..dense.len())
        .into_par_iter()
        .map(|i| {
            let j = nearest.neighbors(i)[0];
            fusion.forward(&vn_concat(&sparse_features[j], &skip_features[i]))
        })
        .collect()
}
