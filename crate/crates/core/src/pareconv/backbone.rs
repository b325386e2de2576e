use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::block::{nearest_upsample, pare_resblock, strided_block, BlockShape, ResBlock, VnBlock};
use super::conv::ConvMode;
use crate::geom::{apply_transform, knn, point_to_node_group, voxel_downsample_members, NeighborGraph, NodeGrouping};
use crate::params::{join, Parameters};
use crate::vn::{vn_invariant, InvariantFeature, VectorFeature, VnInvariantHead};
use crate::{Error, PointCloud, Real, Result, RigidTransform};

/// Pyramid geometry and layer widths.
///
/// `widths` are the vector-channel counts of the three encoder stages; `point_channels` is
/// the decoder output width, so dense invariant descriptors have `3 * point_channels` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub voxel: f64,
    pub ratio: f64,
    pub k: usize,
    pub kernels: usize,
    pub mode: ConvMode,
    pub widths: [usize; 3],
    pub point_channels: usize,
    pub corr_dim: usize,
    pub corr_hidden: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::indoor()
    }
}

impl BackboneConfig {
    pub fn indoor() -> Self {
        Self {
            voxel: 0.025,
            ratio: 2.0,
            k: 35,
            kernels: 4,
            mode: ConvMode::Edge,
            widths: [32, 64, 128],
            point_channels: 85,
            corr_dim: 16,
            corr_hidden: 16,
        }
    }

    pub fn outdoor() -> Self {
        Self {
            voxel: 0.3,
            ratio: 2.5,
            point_channels: 21,
            ..Self::indoor()
        }
    }

    /// Voxel size used to produce level `l` (1..=3) from the input cloud.
    pub fn level_voxel(&self, l: usize) -> f64 {
        self.voxel * self.ratio.powi(l as i32 - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.voxel > 0.0 && self.voxel.is_finite()) {
            return bad("voxel must be positive");
        }
        if !(self.ratio >= 1.0 && self.ratio.is_finite()) {
            return bad("ratio must be at least 1");
        }
        if self.k == 0 || self.kernels == 0 || self.corr_dim == 0 || self.corr_hidden == 0 {
            return bad("k, kernels and correlation widths must be positive");
        }
        if self.widths.contains(&0) || self.point_channels == 0 {
            return bad("channel widths must be positive");
        }
        Ok(())
    }

    fn shape(&self, inp: usize, out: usize) -> BlockShape {
        BlockShape {
            in_channels: inp,
            out_channels: out,
            kernels: self.kernels,
            corr_dim: self.corr_dim,
            corr_hidden: self.corr_hidden,
            mode: self.mode,
        }
    }

    fn stage_io(&self) -> [(usize, usize); 3] {
        let [a, b, c] = self.widths;
        [(INPUT_CHANNELS, a), (a, b), (b, c)]
    }
}

/// Input cloud, three voxel levels and every neighbourhood the backbone needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub levels: [PointCloud; 4],
    /// Self k-NN graph per level.
    pub own: [NeighborGraph; 4],
    /// k-NN of level `l + 1` into level `l`, for the strided blocks.
    pub down: [NeighborGraph; 3],
    /// Indices of level `l` averaged into each point of level `l + 1`.
    pub members: [Vec<Vec<usize>>; 3],
    /// Dense points (level 1) grouped by superpoint (level 3).
    pub grouping: NodeGrouping,
}

impl Pyramid {
    pub fn build(cloud: &PointCloud, cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        cloud.ensure_non_empty()?;
        let (l1, m1) = voxel_downsample_members(cloud, cfg.level_voxel(1))?;
        let (l2, m2) = voxel_downsample_members(&l1, cfg.level_voxel(2))?;
        let (l3, m3) = voxel_downsample_members(&l2, cfg.level_voxel(3))?;
        Self::from_levels([cloud.clone(), l1, l2, l3], [m1, m2, m3], cfg.k)
    }

    /// Builds graphs for explicitly given levels and memberships. Level 3 needs at least
    /// two points.
    pub fn from_levels(levels: [PointCloud; 4], members: [Vec<Vec<usize>>; 3], k: usize) -> Result<Self> {
        for (level, c) in levels.iter().enumerate() {
            let min = if level == 3 { 2 } else { 1 };
            if c.len() < min {
                return Err(Error::CloudTooSmall { level, points: c.len() });
            }
        }
        for (l, m) in members.iter().enumerate() {
            if m.len() != levels[l + 1].len() {
                return Err(Error::dims(
                    format!("level {} member lists", l + 1),
                    levels[l + 1].len(),
                    m.len(),
                ));
            }
            if m.iter().flatten().any(|&j| j >= levels[l].len()) {
                return Err(Error::InvalidArgument(format!(
                    "level {} member index out of range",
                    l + 1
                )));
            }
        }
        let own = [
            knn(&levels[0], &levels[0], k)?,
            knn(&levels[1], &levels[1], k)?,
            knn(&levels[2], &levels[2], k)?,
            knn(&levels[3], &levels[3], k)?,
        ];
        let down = [
            knn(&levels[0], &levels[1], k)?,
            knn(&levels[1], &levels[2], k)?,
            knn(&levels[2], &levels[3], k)?,
        ];
        let grouping = point_to_node_group(&levels[1], &levels[3])?;
        Ok(Self {
            levels,
            own,
            down,
            members,
            grouping,
        })
    }

    /// The same pyramid carried by a rigid motion. Voxel grids are axis aligned, so
    /// rebuilding from a moved cloud generally selects different points.
    pub fn transformed(&self, t: &RigidTransform) -> Result<Self> {
        let k = self.own[0].neighbors(0).len();
        Self::from_levels(
            self.levels.clone().map(|c| apply_transform(&c, t)),
            self.members.clone(),
            k,
        )
    }

    pub fn dense(&self) -> &PointCloud {
        &self.levels[1]
    }

    pub fn superpoints(&self) -> &PointCloud {
        &self.levels[3]
    }
}

/// Every learnable tensor of the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams<T: Real> {
    pub config: BackboneConfig,
    /// Per stage: strided block followed by two residual blocks.
    pub stages: [[ResBlock<T>; 3]; 3],
    /// Decoder fusion blocks, coarse to fine.
    pub up: [VnBlock<T>; 2],
    pub superpoint_head: VnInvariantHead<T>,
    pub point_head: VnInvariantHead<T>,
}

impl<T: Real> BackboneParams<T> {
    pub fn zeros(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(
            config,
            |s| ResBlock::zeros(s),
            |o, i| VnBlock::zeros(o, i),
            |c| VnInvariantHead::zeros(c),
        ))
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let cell = std::cell::RefCell::new(rng);
        Ok(Self::build(
            config,
            |s| ResBlock::random(*cell.borrow_mut(), s),
            |o, i| VnBlock::random(*cell.borrow_mut(), o, i),
            |c| VnInvariantHead::random(*cell.borrow_mut(), c),
        ))
    }

    fn build(
        cfg: &BackboneConfig,
        block: impl Fn(&BlockShape) -> ResBlock<T>,
        fuse: impl Fn(usize, usize) -> VnBlock<T>,
        head: impl Fn(usize) -> VnInvariantHead<T>,
    ) -> Self {
        let stages = cfg.stage_io().map(|(i, o)| {
            [
                block(&cfg.shape(i, o)),
                block(&cfg.shape(o, o)),
                block(&cfg.shape(o, o)),
            ]
        });
        let [c1, c2, c3] = cfg.widths;
        let up = [fuse(c2, c3 + c2), fuse(cfg.point_channels, c2 + c1)];
        Self {
            config: cfg.clone(),
            stages,
            up,
            superpoint_head: head(c3),
            point_head: head(cfg.point_channels),
        }
    }
}

impl<T: Real> Parameters<T> for BackboneParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_mut(&join(prefix, &format!("stage{s}.block{b}")), f);
            }
        }
        for (i, u) in self.up.iter_mut().enumerate() {
            u.visit_mut(&join(prefix, &format!("up{i}")), f);
        }
        self.superpoint_head.visit_mut(&join(prefix, "head_superpoint"), f);
        self.point_head.visit_mut(&join(prefix, "head_point"), f);
    }
}

/// Backbone output: superpoints and dense points with equivariant and invariant features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<T: Real> {
    pub superpoints: PointCloud,
    pub superpoint_features: Vec<VectorFeature<T>>,
    pub superpoint_descriptors: Vec<InvariantFeature<T>>,
    pub points: PointCloud,
    pub point_features: Vec<VectorFeature<T>>,
    pub point_descriptors: Vec<InvariantFeature<T>>,
    pub grouping: NodeGrouping,
}

/// Named intermediate outputs in evaluation order.
pub type Trace<T> = Vec<(String, Vec<VectorFeature<T>>)>;

/// Channels of the input feature built by [`initial_features`].
pub const INPUT_CHANNELS: usize = 3;

/// Input features from the level-0 k-NN offsets `o_j`, in units of `scale`: the mean offset
/// `m`, the second moment applied to it `mean((o_j . m) o_j)` and the cubic moment
/// `mean(|o_j|^2 o_j)`.
pub fn initial_features<T: Real>(cloud: &PointCloud, graph: &NeighborGraph, scale: f64) -> Vec<VectorFeature<T>> {
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let nb = graph.neighbors(i);
            if nb.is_empty() {
                return VectorFeature::zeros(INPUT_CHANNELS);
            }
            let n = nb.len() as f64;
            let o: Vec<Vector3<f64>> = nb.iter().map(|&j| (cloud[j] - cloud[i]) / scale).collect();
            let m = o.iter().sum::<Vector3<f64>>() / n;
            let second = o.iter().map(|v| v * v.dot(&m)).sum::<Vector3<f64>>() / n;
            let cubic = o.iter().map(|v| v * v.norm_squared()).sum::<Vector3<f64>>() / n;
            VectorFeature::from_rows(&[m.map(T::of_f64), second.map(T::of_f64), cubic.map(T::of_f64)])
        })
        .collect()
}

pub fn backbone_forward<T: Real>(params: &BackboneParams<T>, cloud: &PointCloud) -> Result<FeaturePyramid<T>> {
    let pyramid = Pyramid::build(cloud, &params.config)?;
    backbone_forward_on(params, &pyramid)
}

pub fn backbone_forward_on<T: Real>(params: &BackboneParams<T>, pyramid: &Pyramid) -> Result<FeaturePyramid<T>> {
    forward(params, pyramid, None)
}

/// Runs the backbone and also returns every block output.
pub fn backbone_forward_traced<T: Real>(
    params: &BackboneParams<T>,
    pyramid: &Pyramid,
) -> Result<(FeaturePyramid<T>, Trace<T>)> {
    let mut trace = Vec::new();
    let out = forward(params, pyramid, Some(&mut trace))?;
    Ok((out, trace))
}

fn forward<T: Real>(
    params: &BackboneParams<T>,
    pyr: &Pyramid,
    mut trace: Option<&mut Trace<T>>,
) -> Result<FeaturePyramid<T>> {
    let mut record = |name: String, f: &Vec<VectorFeature<T>>| {
        if let Some(t) = trace.as_deref_mut() {
            t.push((name, f.clone()));
        }
    };
    let mut feats = initial_features::<T>(&pyr.levels[0], &pyr.own[0], params.config.voxel);
    record("input".into(), &feats);
    let mut skips = Vec::with_capacity(3);
    for (s, stage) in params.stages.iter().enumerate() {
        let (support, centers) = (&pyr.levels[s], &pyr.levels[s + 1]);
        feats = strided_block(&stage[0], centers, support, &pyr.down[s], &feats, &pyr.members[s])?;
        record(format!("stage{s}.block0"), &feats);
        for (b, block) in stage.iter().enumerate().skip(1) {
            feats = pare_resblock(block, centers, &pyr.own[s + 1], &feats)?;
            record(format!("stage{s}.block{b}"), &feats);
        }
        skips.push(feats.clone());
    }
    let coarse = feats;
    let mid = nearest_upsample(&coarse, &pyr.levels[3], &pyr.levels[2], &skips[1], &params.up[0])?;
    record("up0".into(), &mid);
    let dense = nearest_upsample(&mid, &pyr.levels[2], &pyr.levels[1], &skips[0], &params.up[1])?;
    record("up1".into(), &dense);

    let invariants = |head: &VnInvariantHead<T>, f: &[VectorFeature<T>]| -> Result<Vec<InvariantFeature<T>>> {
        f.par_iter().map(|x| vn_invariant(head, x)).collect()
    };
    Ok(FeaturePyramid {
        superpoints: pyr.levels[3].clone(),
        superpoint_descriptors: invariants(&params.superpoint_head, &coarse)?,
        superpoint_features: coarse,
        points: pyr.levels[1].clone(),
        point_descriptors: invariants(&params.point_head, &dense)?,
        point_features: dense,
        grouping: pyr.grouping.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{random_rotation, Point3};
    use crate::params::{count, export};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> BackboneConfig {
        BackboneConfig {
            voxel: 0.08,
            ratio: 2.0,
            k: 8,
            kernels: 3,
            mode: ConvMode::Edge,
            widths: [4, 6, 8],
            point_channels: 5,
            corr_dim: 4,
            corr_hidden: 4,
        }
    }

    fn cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random::<f64>() * 0.5))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn presets() {
        let i = BackboneConfig::indoor();
        assert_eq!((i.k, i.kernels, i.ratio, i.voxel), (35, 4, 2.0, 0.025));
        assert_eq!(3 * i.point_channels, 255);
        let o = BackboneConfig::outdoor();
        assert_eq!((o.ratio, o.voxel), (2.5, 0.3));
        assert_eq!(3 * o.point_channels, 63);
        assert!((o.level_voxel(3) - 0.3 * 6.25).abs() < 1e-12);
        let json = serde_json::to_string(&o).unwrap();
        assert_eq!(serde_json::from_str::<BackboneConfig>(&json).unwrap(), o);
        let partial: BackboneConfig = serde_json::from_str(r#"{"k": 10, "mode": "node"}"#).unwrap();
        assert_eq!((partial.k, partial.mode, partial.voxel), (10, ConvMode::Node, 0.025));
    }

    #[test]
    fn output_shapes_and_cardinalities() {
        let cfg = small_config();
        let params = BackboneParams::<f64>::random(&mut ChaCha8Rng::seed_from_u64(1), &cfg).unwrap();
        let c = cloud(2, 600);
        let pyr = Pyramid::build(&c, &cfg).unwrap();
        let out = backbone_forward_on(&params, &pyr).unwrap();
        assert_eq!(out.points.len(), pyr.levels[1].len());
        assert_eq!(out.superpoints.len(), pyr.levels[3].len());
        assert!(pyr.levels[1].len() > pyr.levels[2].len() && pyr.levels[2].len() > pyr.levels[3].len());
        assert_eq!(out.point_features.len(), out.points.len());
        assert!(out.point_features.iter().all(|f| f.channels() == 5));
        assert!(out.point_descriptors.iter().all(|x| x.len() == 15));
        assert!(out.superpoint_descriptors.iter().all(|x| x.len() == 24));
        assert_eq!(out.grouping.num_points(), out.points.len());
        assert_eq!(out.grouping.num_nodes(), out.superpoints.len());
        assert_eq!(
            out.grouping.groups().iter().map(Vec::len).sum::<usize>(),
            out.points.len()
        );
    }

    #[test]
    fn deterministic() {
        let cfg = small_config();
        let a = BackboneParams::<f64>::random(&mut ChaCha8Rng::seed_from_u64(3), &cfg).unwrap();
        let b = BackboneParams::<f64>::random(&mut ChaCha8Rng::seed_from_u64(3), &cfg).unwrap();
        assert_eq!(a, b);
        let c = cloud(4, 500);
        assert_eq!(backbone_forward(&a, &c).unwrap(), backbone_forward(&b, &c).unwrap());
    }

    #[test]
    fn too_small_cloud() {
        let cfg = small_config();
        let params = BackboneParams::<f64>::zeros(&cfg).unwrap();
        let one = PointCloud::new(vec![Point3::zeros(), Point3::new(0.01, 0.0, 0.0)]).unwrap();
        assert!(matches!(
            backbone_forward(&params, &one),
            Err(Error::CloudTooSmall { level: 3, .. })
        ));
    }

    #[test]
    fn parameter_names_unique() {
        let cfg = small_config();
        let p = BackboneParams::<f64>::zeros(&cfg).unwrap();
        let names: Vec<_> = export(&p).into_iter().map(|(n, _)| n).collect();
        let set: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert!(count(&p) > 0);
        assert!(names.contains(&"stage0.block0.conv.bank.w0".to_string()), "{names:?}");
    }

    #[test]
    fn equivariant_and_invariant() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = BackboneParams::<f64>::random(&mut rng, &cfg).unwrap();
        let pyr = Pyramid::build(&cloud(6, 500), &cfg).unwrap();
        let (a, ta) = backbone_forward_traced(&params, &pyr).unwrap();
        for seed in 0..3 {
            let r = random_rotation(seed);
            let t = RigidTransform::new(r, Vector3::new(3.0, -1.0, 0.5));
            let (b, tb) = backbone_forward_traced(&params, &pyr.transformed(&t).unwrap()).unwrap();
            for ((name, x), (_, y)) in ta.iter().zip(&tb) {
                let (mut num, mut den) = (0.0, 0.0);
                for (u, v) in x.iter().zip(y) {
                    num += (u.rotated(&r).as_matrix() - v.as_matrix()).norm_squared();
                    den += u.as_matrix().norm_squared();
                }
                assert!((num / den).sqrt() <= 1e-9, "{name}: {}", (num / den).sqrt());
            }
            for (u, v) in a.point_descriptors.iter().zip(&b.point_descriptors) {
                assert!((&u.v - &v.v).amax() <= 1e-9);
            }
            for (u, v) in a.superpoint_descriptors.iter().zip(&b.superpoint_descriptors) {
                assert!((&u.v - &v.v).amax() <= 1e-9);
            }
            assert_eq!(a.grouping, b.grouping);
        }
    }
}
