//! Superpoint context, coarse superpoint matching and patch-local point matching.
//!
//! The context module replaces a learned geometric embedding with a per-head scalar bias on
//! pairwise superpoint distance; everything it consumes is rotation invariant.

mod attention;
mod coarse;
mod fine;

pub use attention::{context_attention, distance_bias, Attention, ContextConfig, ContextParams, ContextRound};
pub use coarse::{dual_normalized_correlation, normalize_rows, superpoint_match, SuperpointMatch};
pub use fine::{
    match_patches, point_match, row_softmax, select_correspondences, MatchHeads, PatchAssignment, PointMatch,
};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{join, Parameters};
use crate::pareconv::FeaturePyramid;
use crate::{Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchingConfig {
    pub context: ContextConfig,
    pub coarse_matches: usize,
    pub fine_matches: usize,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self::indoor()
    }
}

impl MatchingConfig {
    pub fn indoor() -> Self {
        Self {
            context: ContextConfig::indoor(),
            coarse_matches: 256,
            fine_matches: 1000,
        }
    }

    pub fn outdoor() -> Self {
        Self {
            context: ContextConfig::outdoor(),
            ..Self::indoor()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingParams<T: Real> {
    pub config: MatchingConfig,
    pub context: ContextParams<T>,
    pub heads: MatchHeads<T>,
}

impl<T: Real> MatchingParams<T> {
    /// `superpoint_dim` and `point_dim` are the invariant descriptor lengths of the backbone.
    pub fn zeros(config: &MatchingConfig, superpoint_dim: usize, point_dim: usize) -> Result<Self> {
        Ok(Self {
            config: config.clone(),
            context: ContextParams::zeros(&config.context, superpoint_dim)?,
            heads: MatchHeads::zeros(point_dim),
        })
    }

    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        config: &MatchingConfig,
        superpoint_dim: usize,
        point_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            config: config.clone(),
            context: ContextParams::random(rng, &config.context, superpoint_dim)?,
            heads: MatchHeads::random(rng, point_dim),
        })
    }
}

impl<T: Real> Parameters<T> for MatchingParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        self.context.visit_mut(&join(prefix, "context"), f);
        self.heads.visit_mut(&join(prefix, "heads"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingOutput<T: Real> {
    pub context_p: DMatrix<T>,
    pub context_q: DMatrix<T>,
    pub coarse: Vec<SuperpointMatch>,
    pub patches: Vec<Option<PatchAssignment<T>>>,
    pub fine: Vec<PointMatch>,
}

/// Stacks invariant descriptors as matrix rows.
pub fn descriptor_matrix<T: Real>(rows: &[crate::InvariantFeature<T>]) -> DMatrix<T> {
    let d = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i].v[j])
}

/// Full coarse-to-fine matching between two backbone outputs.
pub fn match_pyramids<T: Real>(
    params: &MatchingParams<T>,
    p: &FeaturePyramid<T>,
    q: &FeaturePyramid<T>,
) -> Result<MatchingOutput<T>> {
    let (context_p, context_q) = context_attention(
        &params.context,
        &p.superpoint_descriptors,
        &q.superpoint_descriptors,
        &p.superpoints,
        &q.superpoints,
    )?;
    let coarse = superpoint_match(&context_p, &context_q, params.config.coarse_matches)?;
    let (dp, dq) = (
        descriptor_matrix(&p.point_descriptors),
        descriptor_matrix(&q.point_descriptors),
    );
    let patches = match_patches(&params.heads, &coarse, &p.grouping, &q.grouping, &dp, &dq)?;
    let fine = select_correspondences(&patches, params.config.fine_matches)?;
    Ok(MatchingOutput {
        context_p,
        context_q,
        coarse,
        patches,
        fine,
    })
}
