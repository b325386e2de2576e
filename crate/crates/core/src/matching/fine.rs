use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coarse::{ranked, SuperpointMatch};
use crate::dense::{sigmoid, Dense};
use crate::params::{join, uniform, Parameters};
use crate::{Error, NodeGrouping, Real, Result};

/// Matchability map `W_m` (`D x D`) and saliency head `W_s` (`D -> 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchHeads<T: Real> {
    pub wm: DMatrix<T>,
    pub ws: Dense<T>,
}

impl<T: Real> MatchHeads<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            wm: DMatrix::zeros(dim, dim),
            ws: Dense::zeros(1, dim),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        Self {
            wm: uniform(rng, dim, dim, (3.0 / dim.max(1) as f64).sqrt()),
            ws: Dense::random(rng, 1, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.wm.ncols()
    }
}

impl<T: Real> Parameters<T> for MatchHeads<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        f(&join(prefix, "wm"), &mut self.wm);
        self.ws.visit_mut(&join(prefix, "ws"), f);
    }
}

/// Soft assignment between one source patch and one target patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchAssignment<T: Real> {
    /// Global source point indices (rows of `z`).
    pub rows: Vec<usize>,
    /// Global target point indices (columns of `z`).
    pub cols: Vec<usize>,
    pub matching: DMatrix<T>,
    pub sigma_p: DVector<T>,
    pub sigma_q: DVector<T>,
    pub z: DMatrix<T>,
}

impl<T: Real> PatchAssignment<T> {
    /// Entries of `z` as `(score, x, y)` with global indices, descending.
    pub fn ranked(&self) -> Vec<(f64, usize, usize)> {
        let mut v: Vec<_> = (0..self.rows.len())
            .flat_map(|i| (0..self.cols.len()).map(move |j| (i, j)))
            .map(|(i, j)| (self.z[(i, j)].as_f64(), self.rows[i], self.cols[j]))
            .collect();
        v.sort_by(ranked);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMatch {
    pub x: usize,
    pub y: usize,
    pub score: f64,
    /// Rank of the parent superpoint pair.
    pub patch: usize,
}

fn gather<T: Real>(desc: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), desc.ncols(), |i, j| desc[(idx[i], j)])
}

/// Row-wise softmax of `m`.
pub fn row_softmax<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let mut out = m.clone();
    for mut r in out.row_iter_mut() {
        let mx = r.iter().copied().fold(r[0], |a, b| a.max(b));
        r.apply(|v| *v = (*v - mx).exp());
        let s = r.sum();
        r /= s;
    }
    out
}

/// `M = (W_m x)^T (W_m y) / sqrt(D)`, `sigma = logistic(W_s x + b)`,
/// `Z = sigma_x sigma_y rowsoftmax(M) colsoftmax(M)`.
///
/// `desc_p` and `desc_q` hold one descriptor per row. Returns `None` for an empty group.
pub fn point_match<T: Real>(
    heads: &MatchHeads<T>,
    group_p: &[usize],
    group_q: &[usize],
    desc_p: &DMatrix<T>,
    desc_q: &DMatrix<T>,
) -> Result<Option<PatchAssignment<T>>> {
    for d in [desc_p, desc_q] {
        if d.ncols() != heads.dim() {
            return Err(Error::dims("point descriptor width", heads.dim(), d.ncols()));
        }
    }
    if group_p.is_empty() || group_q.is_empty() {
        return Ok(None);
    }
    if group_p.iter().any(|&i| i >= desc_p.nrows()) || group_q.iter().any(|&i| i >= desc_q.nrows()) {
        return Err(Error::InvalidArgument("patch index out of range".into()));
    }
    let (xp, xq) = (gather(desc_p, group_p), gather(desc_q, group_q));
    let ap = &xp * heads.wm.transpose();
    let aq = &xq * heads.wm.transpose();
    let matching = ap * aq.transpose() * T::of_f64(1.0 / (heads.dim() as f64).sqrt());
    let sal = |x: &DMatrix<T>| -> Result<DVector<T>> { Ok(heads.ws.forward_rows(x)?.column(0).map(sigmoid)) };
    let (sigma_p, sigma_q) = (sal(&xp)?, sal(&xq)?);
    let rs = row_softmax(&matching);
    let cs = row_softmax(&matching.transpose()).transpose();
    let z = DMatrix::from_fn(matching.nrows(), matching.ncols(), |i, j| {
        sigma_p[i] * sigma_q[j] * rs[(i, j)] * cs[(i, j)]
    });
    Ok(Some(PatchAssignment {
        rows: group_p.to_vec(),
        cols: group_q.to_vec(),
        matching,
        sigma_p,
        sigma_q,
        z,
    }))
}

/// Point matching over every superpoint pair; empty patches are skipped (`None`).
pub fn match_patches<T: Real>(
    heads: &MatchHeads<T>,
    coarse: &[SuperpointMatch],
    groups_p: &NodeGrouping,
    groups_q: &NodeGrouping,
    desc_p: &DMatrix<T>,
    desc_q: &DMatrix<T>,
) -> Result<Vec<Option<PatchAssignment<T>>>> {
    coarse
        .par_iter()
        .map(|m| {
            if m.x >= groups_p.num_nodes() || m.y >= groups_q.num_nodes() {
                return Err(Error::InvalidArgument("superpoint index out of range".into()));
            }
            point_match(heads, groups_p.group(m.x), groups_q.group(m.y), desc_p, desc_q)
        })
        .collect()
}

/// Global top-`n_f` entries across patches, ordered by score then `(patch, x, y)`.
/// Points may appear in several pairs.
pub fn select_correspondences<T: Real>(patches: &[Option<PatchAssignment<T>>], n_f: usize) -> Result<Vec<PointMatch>> {
    let mut all: Vec<(f64, usize, usize, usize)> = patches
        .iter()
        .enumerate()
        .filter_map(|(k, p)| p.as_ref().map(|p| (k, p)))
        .flat_map(|(k, p)| {
            (0..p.rows.len())
                .flat_map(move |i| (0..p.cols.len()).map(move |j| (i, j)))
                .map(move |(i, j)| (p.z[(i, j)].as_f64(), k, p.rows[i], p.cols[j]))
        })
        .collect();
    if all.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    let order = |a: &(f64, usize, usize, usize), b: &(f64, usize, usize, usize)| {
        b.0.total_cmp(&a.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3)))
    };
    let n = n_f.min(all.len());
    if n > 0 && n < all.len() {
        all.select_nth_unstable_by(n - 1, order);
    }
    all.truncate(n);
    all.sort_by(order);
    Ok(all
        .into_iter()
        .map(|(score, patch, x, y)| PointMatch { x, y, score, patch })
        .collect())
}
