//! Point matching and contrastive rotation losses with analytic gradients, and a
//! central-difference gradient checker.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dense::sigmoid;
use crate::matching::row_softmax;
use crate::{Error, Point3, Result, Rotation, VectorFeature};

/// Floor applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Positive margin.
    pub alpha: f64,
    /// Negative margin.
    pub beta: f64,
    /// Pairs closer than this (metres, after alignment) are positives.
    pub d_p: f64,
    /// Pairs farther than this are negatives.
    pub d_n: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 1.4,
            d_p: 0.05,
            d_n: 0.10,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < self.beta) {
            return Err(Error::InvalidArgument("margins must satisfy 0 < alpha < beta".into()));
        }
        if !(0.0 < self.d_p && self.d_p < self.d_n) {
            return Err(Error::InvalidArgument("radii must satisfy 0 < d_p < d_n".into()));
        }
        Ok(())
    }
}

fn clamped_ln(v: f64, what: &str) -> f64 {
    if v < LOG_EPS {
        log::warn!("{what} {v:e} clamped to {LOG_EPS:e} inside log");
        LOG_EPS.ln()
    } else {
        v.ln()
    }
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        0.0
    } else {
        it.sum::<f64>() / n as f64
    }
}

/// `-mean_pos log Z - 1/2 mean_I log(1 - sigma_P) - 1/2 mean_J log(1 - sigma_Q)`;
/// empty sets contribute zero.
pub fn point_matching_loss(
    z: &DMatrix<f64>,
    sigma_p: &DVector<f64>,
    sigma_q: &DVector<f64>,
    positives: &[(usize, usize)],
    unmatched_p: &[usize],
    unmatched_q: &[usize],
) -> Result<f64> {
    if sigma_p.len() != z.nrows() || sigma_q.len() != z.ncols() {
        return Err(Error::dims(
            "saliency length",
            z.nrows() + z.ncols(),
            sigma_p.len() + sigma_q.len(),
        ));
    }
    let bad = positives.iter().any(|&(x, y)| x >= z.nrows() || y >= z.ncols())
        || unmatched_p.iter().any(|&i| i >= z.nrows())
        || unmatched_q.iter().any(|&j| j >= z.ncols());
    if bad {
        return Err(Error::InvalidArgument("loss index out of range".into()));
    }
    let pos = mean(positives.iter().map(|&(x, y)| -clamped_ln(z[(x, y)], "assignment")));
    let np = mean(
        unmatched_p
            .iter()
            .map(|&i| -clamped_ln(1.0 - sigma_p[i], "1 - saliency")),
    );
    let nq = mean(
        unmatched_q
            .iter()
            .map(|&j| -clamped_ln(1.0 - sigma_q[j], "1 - saliency")),
    );
    Ok(pos + 0.5 * np + 0.5 * nq)
}

/// Squared channel distances `|R f_P,c - f_Q,c|^2` and residual rows.
fn channel_residuals(fp: &VectorFeature<f64>, fq: &VectorFeature<f64>, r: &Rotation) -> Vec<Vector3<f64>> {
    let rp = fp.rotated(r);
    (0..fp.channels()).map(|c| rp.row(c) - fq.row(c)).collect()
}

fn check_pairs(pairs: &[(usize, usize)], np: usize, nq: usize) -> Result<()> {
    if pairs.iter().any(|&(a, b)| a >= np || b >= nq) {
        return Err(Error::InvalidArgument("pair index out of range".into()));
    }
    Ok(())
}

fn check_channels(fp: &[VectorFeature<f64>], fq: &[VectorFeature<f64>]) -> Result<usize> {
    let c = fp.first().or(fq.first()).map_or(0, |f| f.channels());
    if let Some(f) = fp.iter().chain(fq).find(|f| f.channels() != c) {
        return Err(Error::dims("contrastive feature channels", c, f.channels()));
    }
    Ok(c)
}

/// Per-channel hinges: mean over positive pairs and channels of `[d - alpha]_+` plus mean
/// over negative pairs and channels of `[beta - d]_+`, with `d = |R f_P,c - f_Q,c|^2`.
pub fn contrastive_rotation_loss(
    fp: &[VectorFeature<f64>],
    fq: &[VectorFeature<f64>],
    r_gt: &Rotation,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<f64> {
    let c = check_channels(fp, fq)?;
    check_pairs(positives, fp.len(), fq.len())?;
    check_pairs(negatives, fp.len(), fq.len())?;
    let term = |pairs: &[(usize, usize)], hinge: &dyn Fn(f64) -> f64| {
        if pairs.is_empty() || c == 0 {
            return 0.0;
        }
        let s: f64 = pairs
            .iter()
            .flat_map(|&(a, b)| channel_residuals(&fp[a], &fq[b], r_gt))
            .map(|e| hinge(e.norm_squared()))
            .sum();
        s / (pairs.len() * c) as f64
    };
    Ok(term(positives, &|d| (d - cfg.alpha).max(0.0)) + term(negatives, &|d| (cfg.beta - d).max(0.0)))
}

/// Positive pairs closer than `d_p`, negatives farther than `d_n`, measured between
/// `aligned_src` (already in the target frame) and `dst`. Also returns the source and
/// target indices without any positive.
pub fn label_pairs(aligned_src: &[Point3], dst: &[Point3], cfg: &LossConfig) -> LabeledPairs {
    let mut out = LabeledPairs::default();
    let mut has_p = vec![false; aligned_src.len()];
    let mut has_q = vec![false; dst.len()];
    for (i, p) in aligned_src.iter().enumerate() {
        for (j, q) in dst.iter().enumerate() {
            let d = (p - q).norm();
            if d < cfg.d_p {
                out.positives.push((i, j));
                has_p[i] = true;
                has_q[j] = true;
            } else if d > cfg.d_n {
                out.negatives.push((i, j));
            }
        }
    }
    out.unmatched_p = (0..aligned_src.len()).filter(|&i| !has_p[i]).collect();
    out.unmatched_q = (0..dst.len()).filter(|&j| !has_q[j]).collect();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledPairs {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    pub unmatched_p: Vec<usize>,
    pub unmatched_q: Vec<usize>,
}

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Discrete state (e.g. active hinges) that must not change inside the probe stencil.
    fn active_set(&self, _x: &[f64]) -> Vec<bool> {
        Vec::new()
    }
}

/// Max relative deviation `max|a - n| / max(|a|_inf, |n|_inf)` between the analytic
/// gradient and central differences with step `eps`. Fails with
/// [`Error::ActiveSetFlip`] when a perturbation changes the active set.
pub fn finite_diff_gradcheck<F: Differentiable + ?Sized>(f: &F, x: &[f64], eps: f64) -> Result<f64> {
    let analytic = f.gradient(x);
    if analytic.len() != x.len() {
        return Err(Error::dims("gradient length", x.len(), analytic.len()));
    }
    let base = f.active_set(x);
    let mut probe = x.to_vec();
    let mut numeric = vec![0.0; x.len()];
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        if f.active_set(&probe) != base {
            return Err(Error::ActiveSetFlip(i));
        }
        let hi = f.value(&probe);
        probe[i] = x[i] - eps;
        if f.active_set(&probe) != base {
            return Err(Error::ActiveSetFlip(i));
        }
        let lo = f.value(&probe);
        probe[i] = x[i];
        numeric[i] = (hi - lo) / (2.0 * eps);
    }
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let diff = analytic
        .iter()
        .zip(&numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = inf(&analytic).max(inf(&numeric));
    Ok(if scale == 0.0 { 0.0 } else { diff / scale })
}

/// Point matching loss as a function of the matching logits `M` and saliency logits,
/// through `Z = sigmoid(a_x) sigmoid(b_y) rowsoftmax(M) colsoftmax(M)`.
///
/// Parameters are packed as `[M row-major (rows*cols), a (rows), b (cols)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMatchingObjective {
    pub rows: usize,
    pub cols: usize,
    pub positives: Vec<(usize, usize)>,
    pub unmatched_p: Vec<usize>,
    pub unmatched_q: Vec<usize>,
}

impl PointMatchingObjective {
    pub fn unpack(&self, x: &[f64]) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let n = self.rows * self.cols;
        (
            DMatrix::from_row_slice(self.rows, self.cols, &x[..n]),
            DVector::from_column_slice(&x[n..n + self.rows]),
            DVector::from_column_slice(&x[n + self.rows..n + self.rows + self.cols]),
        )
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows + self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Assignment matrix and saliencies for packed parameters.
    pub fn forward(&self, x: &[f64]) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let (m, a, b) = self.unpack(x);
        let rs = row_softmax(&m);
        let cs = row_softmax(&m.transpose()).transpose();
        let (sp, sq) = (a.map(sigmoid), b.map(sigmoid));
        let z = DMatrix::from_fn(self.rows, self.cols, |i, j| sp[i] * sq[j] * rs[(i, j)] * cs[(i, j)]);
        (z, sp, sq)
    }
}

impl Differentiable for PointMatchingObjective {
    fn value(&self, x: &[f64]) -> f64 {
        let (z, sp, sq) = self.forward(x);
        point_matching_loss(&z, &sp, &sq, &self.positives, &self.unmatched_p, &self.unmatched_q)
            .expect("objective indices are validated by construction")
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (m, a, b) = self.unpack(x);
        let rs = row_softmax(&m);
        let cs = row_softmax(&m.transpose()).transpose();
        let (r, c) = (self.rows, self.cols);
        let mut g = vec![0.0; self.len()];
        let (z, _, _) = self.forward(x);
        if !self.positives.is_empty() {
            let w = 1.0 / self.positives.len() as f64;
            for &(px, py) in &self.positives {
                if z[(px, py)] < LOG_EPS {
                    continue;
                }
                // d log rs_xy / dM_xj = delta_yj - rs_xj ; d log cs_xy / dM_iy = delta_xi - cs_iy
                for j in 0..c {
                    g[px * c + j] -= w * (f64::from(u8::from(j == py)) - rs[(px, j)]);
                }
                for i in 0..r {
                    g[i * c + py] -= w * (f64::from(u8::from(i == px)) - cs[(i, py)]);
                }
                g[r * c + px] -= w * (1.0 - sigmoid(a[px]));
                g[r * c + r + py] -= w * (1.0 - sigmoid(b[py]));
            }
        }
        // d/da -log(1 - sigmoid(a)) = sigmoid(a)
        if !self.unmatched_p.is_empty() {
            let w = 0.5 / self.unmatched_p.len() as f64;
            for &i in &self.unmatched_p {
                if 1.0 - sigmoid(a[i]) >= LOG_EPS {
                    g[r * c + i] += w * sigmoid(a[i]);
                }
            }
        }
        if !self.unmatched_q.is_empty() {
            let w = 0.5 / self.unmatched_q.len() as f64;
            for &j in &self.unmatched_q {
                if 1.0 - sigmoid(b[j]) >= LOG_EPS {
                    g[r * c + r + j] += w * sigmoid(b[j]);
                }
            }
        }
        g
    }

    fn active_set(&self, x: &[f64]) -> Vec<bool> {
        let (z, sp, sq) = self.forward(x);
        self.positives
            .iter()
            .map(|&(i, j)| z[(i, j)] < LOG_EPS)
            .chain(self.unmatched_p.iter().map(|&i| 1.0 - sp[i] < LOG_EPS))
            .chain(self.unmatched_q.iter().map(|&j| 1.0 - sq[j] < LOG_EPS))
            .collect()
    }
}

/// Contrastive rotation loss as a function of the feature entries.
///
/// Parameters are packed as all `F_P` matrices row-major, then all `F_Q` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveObjective {
    pub n_p: usize,
    pub n_q: usize,
    pub channels: usize,
    pub r_gt: Rotation,
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    pub config: LossConfig,
}

impl ContrastiveObjective {
    pub fn len(&self) -> usize {
        (self.n_p + self.n_q) * self.channels * 3
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn unpack(&self, x: &[f64]) -> (Vec<VectorFeature<f64>>, Vec<VectorFeature<f64>>) {
        let block = self.channels * 3;
        let feat = |k: usize| {
            VectorFeature::from_matrix(DMatrix::from_row_slice(
                self.channels,
                3,
                &x[k * block..(k + 1) * block],
            ))
            .expect("finite probe")
        };
        (
            (0..self.n_p).map(feat).collect(),
            (self.n_p..self.n_p + self.n_q).map(feat).collect(),
        )
    }

    pub fn pack(fp: &[VectorFeature<f64>], fq: &[VectorFeature<f64>]) -> Vec<f64> {
        fp.iter()
            .chain(fq)
            .flat_map(|f| {
                let m = f.as_matrix();
                (0..m.nrows()).flat_map(move |i| (0..3).map(move |j| m[(i, j)]))
            })
            .collect()
    }

    fn distances(&self, x: &[f64], pairs: &[(usize, usize)]) -> Vec<Vec<(f64, Vector3<f64>)>> {
        let (fp, fq) = self.unpack(x);
        pairs
            .iter()
            .map(|&(a, b)| {
                channel_residuals(&fp[a], &fq[b], &self.r_gt)
                    .into_iter()
                    .map(|e| (e.norm_squared(), e))
                    .collect()
            })
            .collect()
    }
}

impl Differentiable for ContrastiveObjective {
    fn value(&self, x: &[f64]) -> f64 {
        let (fp, fq) = self.unpack(x);
        contrastive_rotation_loss(&fp, &fq, &self.r_gt, &self.positives, &self.negatives, &self.config)
            .expect("objective indices are validated by construction")
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.len()];
        let block = self.channels * 3;
        let rt = self.r_gt.matrix().transpose();
        let mut add = |pairs: &[(usize, usize)], sign: f64, active: &dyn Fn(f64) -> bool| {
            if pairs.is_empty() {
                return;
            }
            let w = sign / (pairs.len() * self.channels) as f64;
            for (&(a, b), chans) in pairs.iter().zip(self.distances(x, pairs)) {
                for (c, (d, e)) in chans.into_iter().enumerate() {
                    if !active(d) {
                        continue;
                    }
                    // d |R f_p - f_q|^2 = 2 e . (R df_p - df_q)
                    let gp = rt * e * (2.0 * w);
                    let gq = -e * (2.0 * w);
                    for k in 0..3 {
                        g[a * block + c * 3 + k] += gp[k];
                        g[(self.n_p + b) * block + c * 3 + k] += gq[k];
                    }
                }
            }
        };
        let (alpha, beta) = (self.config.alpha, self.config.beta);
        add(&self.positives, 1.0, &|d| d > alpha);
        add(&self.negatives, -1.0, &|d| d < beta);
        g
    }

    fn active_set(&self, x: &[f64]) -> Vec<bool> {
        let (alpha, beta) = (self.config.alpha, self.config.beta);
        let pos = self
            .distances(x, &self.positives)
            .into_iter()
            .flatten()
            .map(|(d, _)| d > alpha);
        let neg = self
            .distances(x, &self.negatives)
            .into_iter()
            .flatten()
            .map(|(d, _)| d < beta);
        pos.chain(neg).collect()
    }
}
