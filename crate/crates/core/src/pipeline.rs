//! The full network: backbone plus matching, and conversion of matches to correspondences.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::estimator::CorrespondenceSet;
use crate::matching::{match_pyramids, MatchingConfig, MatchingOutput, MatchingParams, PointMatch};
use crate::params::{cast_into, join, Parameters};
use crate::pareconv::{backbone_forward_on, BackboneConfig, BackboneParams, FeaturePyramid, Pyramid};
use crate::{PointCloud, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub matching: MatchingConfig,
}

impl ModelConfig {
    pub fn indoor() -> Self {
        Self {
            backbone: BackboneConfig::indoor(),
            matching: MatchingConfig::indoor(),
        }
    }

    pub fn outdoor() -> Self {
        Self {
            backbone: BackboneConfig::outdoor(),
            matching: MatchingConfig::outdoor(),
        }
    }

    /// Invariant descriptor lengths `(superpoint, point)`.
    pub fn descriptor_dims(&self) -> (usize, usize) {
        (3 * self.backbone.widths[2], 3 * self.backbone.point_channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    pub backbone: BackboneParams<T>,
    pub matching: MatchingParams<T>,
}

impl<T: Real> Model<T> {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let (ds, dp) = cfg.descriptor_dims();
        Ok(Self {
            backbone: BackboneParams::zeros(&cfg.backbone)?,
            matching: MatchingParams::zeros(&cfg.matching, ds, dp)?,
        })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let (ds, dp) = cfg.descriptor_dims();
        Ok(Self {
            backbone: BackboneParams::random(rng, &cfg.backbone)?,
            matching: MatchingParams::random(rng, &cfg.matching, ds, dp)?,
        })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.config.clone(),
            matching: self.matching.config.clone(),
        }
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let template = Model::<U>::zeros(&self.config()).expect("config was validated on construction");
        cast_into(self, template)
    }

    pub fn features(&self, pyramid: &Pyramid) -> Result<FeaturePyramid<T>> {
        backbone_forward_on(&self.backbone, pyramid)
    }

    /// Backbone on both pyramids, then coarse-to-fine matching.
    pub fn run(&self, p: &Pyramid, q: &Pyramid) -> Result<(FeaturePyramid<T>, FeaturePyramid<T>, MatchingOutput<T>)> {
        let (fp, fq) = rayon::join(|| self.features(p), || self.features(q));
        let (fp, fq) = (fp?, fq?);
        let m = match_pyramids(&self.matching, &fp, &fq)?;
        Ok((fp, fq, m))
    }
}

impl<T: Real> Parameters<T> for Model<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.matching.visit_mut(&join(prefix, "matching"), f);
    }
}

/// Point matches as estimator input: coordinates of the dense points, their equivariant
/// features (in double precision) and the parent patch of every pair.
pub fn correspondences_from_matches<T: Real>(
    matches: &[PointMatch],
    p: &FeaturePyramid<T>,
    q: &FeaturePyramid<T>,
) -> Result<CorrespondenceSet> {
    let src = matches.iter().map(|m| p.points[m.x]).collect();
    let dst = matches.iter().map(|m| q.points[m.y]).collect();
    let feats = matches
        .iter()
        .map(|m| (p.point_features[m.x].cast::<f64>(), q.point_features[m.y].cast::<f64>()))
        .collect();
    CorrespondenceSet::new(src, dst)?
        .with_features(feats)?
        .with_weights(matches.iter().map(|m| m.score.max(0.0)).collect())?
        .with_patches(matches.iter().map(|m| m.patch).collect())
}

/// Builds both pyramids from raw clouds.
pub fn build_pyramids(p: &PointCloud, q: &PointCloud, cfg: &BackboneConfig) -> Result<(Pyramid, Pyramid)> {
    let (a, b) = rayon::join(|| Pyramid::build(p, cfg), || Pyramid::build(q, cfg));
    Ok((a?, b?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{export, import};
    use crate::pareconv::ConvMode;
    use crate::Point3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny() -> ModelConfig {
        let mut c = ModelConfig::indoor();
        c.backbone = BackboneConfig {
            voxel: 0.08,
            ratio: 2.0,
            k: 8,
            kernels: 2,
            mode: ConvMode::Edge,
            widths: [3, 4, 6],
            point_channels: 4,
            corr_dim: 3,
            corr_hidden: 3,
        };
        c.matching.context.width = 8;
        c.matching.context.out_width = 8;
        c.matching.context.heads = 2;
        c.matching.coarse_matches = 16;
        c.matching.fine_matches = 64;
        c
    }

    fn cloud(seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..400)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random::<f64>() * 0.3))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn names_shapes_and_cast() {
        let cfg = tiny();
        let m = Model::<f64>::random(&mut ChaCha8Rng::seed_from_u64(1), &cfg).unwrap();
        let names: Vec<_> = export(&m).into_iter().map(|(n, _)| n).collect();
        assert!(names
            .iter()
            .all(|n| n.starts_with("backbone.") || n.starts_with("matching.")));
        let single: Model<f32> = m.cast();
        let back: Model<f64> = single.cast();
        for ((_, a), (_, b)) in export(&m).iter().zip(export(&back).iter()) {
            assert!((a - b).amax() <= 1e-6 * a.amax().max(1.0));
        }
        let mut other = Model::<f64>::zeros(&ModelConfig::indoor()).unwrap();
        assert!(import(&mut other, &export(&m)).is_err());
    }

    #[test]
    fn run_produces_correspondences() {
        let cfg = tiny();
        let m = Model::<f64>::random(&mut ChaCha8Rng::seed_from_u64(2), &cfg).unwrap();
        let (p, q) = build_pyramids(&cloud(3), &cloud(4), &cfg.backbone).unwrap();
        let (fp, fq, out) = m.run(&p, &q).unwrap();
        assert!(!out.fine.is_empty() && out.fine.len() <= 64);
        assert!(out.coarse.len() <= 16);
        let c = correspondences_from_matches(&out.fine, &fp, &fq).unwrap();
        assert_eq!(c.len(), out.fine.len());
        assert_eq!(c.features.as_ref().unwrap()[0].0.channels(), 4);
    }
}
