use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperpointMatch {
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

/// Descending by score, then ascending `(x, y)`.
pub(crate) fn ranked(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

/// Rows scaled to unit length; zero rows are left at zero.
pub fn normalize_rows<T: Real>(h: &DMatrix<T>) -> DMatrix<T> {
    let mut out = h.clone();
    for mut r in out.row_iter_mut() {
        let n = r.norm();
        if n > T::zero() {
            r /= n;
        }
    }
    out
}

/// Dual-normalised Gaussian correlation `S^2 / (rowsum * colsum)` with
/// `S_xy = exp(-|h_x - h_y|^2)` over unit-normalised rows.
pub fn dual_normalized_correlation<T: Real>(h_p: &DMatrix<T>, h_q: &DMatrix<T>) -> Result<DMatrix<T>> {
    if h_p.nrows() == 0 || h_q.nrows() == 0 {
        return Err(Error::NoCorrespondences);
    }
    if h_p.ncols() != h_q.ncols() {
        return Err(Error::dims("superpoint feature width", h_p.ncols(), h_q.ncols()));
    }
    let (a, b) = (normalize_rows(h_p), normalize_rows(h_q));
    let s = DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        (-(a.row(i) - b.row(j)).norm_squared()).exp()
    });
    let rows: Vec<T> = s.row_iter().map(|r| r.sum()).collect();
    let cols: Vec<T> = s.column_iter().map(|c| c.sum()).collect();
    Ok(DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| {
        s[(i, j)] * s[(i, j)] / (rows[i] * cols[j])
    }))
}

/// Global top-`n_c` superpoint pairs by dual-normalised score.
pub fn superpoint_match<T: Real>(h_p: &DMatrix<T>, h_q: &DMatrix<T>, n_c: usize) -> Result<Vec<SuperpointMatch>> {
    let s = dual_normalized_correlation(h_p, h_q)?;
    let mut all: Vec<(f64, usize, usize)> = (0..s.nrows())
        .flat_map(|i| (0..s.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| (s[(i, j)].as_f64(), i, j))
        .collect();
    let n = n_c.min(all.len());
    if n > 0 && n < all.len() {
        all.select_nth_unstable_by(n - 1, ranked);
    }
    all.truncate(n);
    all.sort_by(ranked);
    Ok(all
        .into_iter()
        .map(|(score, x, y)| SuperpointMatch { x, y, score })
        .collect())
}
