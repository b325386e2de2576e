use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::Dense;
use crate::params::{join, uniform, Parameters};
use crate::{Error, PointCloud, Real, Result};

/// Widths and schedule of the superpoint context module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    /// Attention width after the input projection.
    pub width: usize,
    /// Output width after the final projection.
    pub out_width: usize,
    pub heads: usize,
    pub rounds: usize,
    /// Distance covered by one bias bucket (metres).
    pub bucket_width: f64,
    pub buckets: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self::indoor()
    }
}

impl ContextConfig {
    pub fn indoor() -> Self {
        Self {
            width: 192,
            out_width: 192,
            heads: 4,
            rounds: 3,
            bucket_width: 0.2,
            buckets: 16,
        }
    }

    pub fn outdoor() -> Self {
        Self {
            width: 96,
            out_width: 128,
            bucket_width: 4.0,
            ..Self::indoor()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.width == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "attention width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.out_width == 0 || self.buckets == 0 || !(self.bucket_width > 0.0) {
            return Err(Error::InvalidArgument(
                "context widths and buckets must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Pre-normalised multi-head attention with residual output
/// `x + W_o concat_h(softmax(q k^T / sqrt(d_h) + b) v)`; `q` reads `layer_norm(x)`, `k` and `v`
/// read `layer_norm(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T: Real> {
    pub q: Dense<T>,
    pub k: Dense<T>,
    pub v: Dense<T>,
    pub o: Dense<T>,
    /// Per-head distance bias table (`heads x buckets`); absent for cross-attention.
    pub bias: Option<DMatrix<T>>,
}

impl<T: Real> Attention<T> {
    fn zeros(width: usize, bias: Option<(usize, usize)>) -> Self {
        Self {
            q: Dense::zeros(width, width),
            k: Dense::zeros(width, width),
            v: Dense::zeros(width, width),
            o: Dense::zeros(width, width),
            bias: bias.map(|(h, b)| DMatrix::zeros(h, b)),
        }
    }

    fn random<R: Rng + ?Sized>(rng: &mut R, width: usize, bias: Option<(usize, usize)>) -> Self {
        Self {
            q: Dense::random(rng, width, width),
            k: Dense::random(rng, width, width),
            v: Dense::random(rng, width, width),
            o: Dense::random(rng, width, width),
            bias: bias.map(|(h, b)| uniform(rng, h, b, 0.5)),
        }
    }
}

impl<T: Real> Parameters<T> for Attention<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        self.q.visit_mut(&join(prefix, "q"), f);
        self.k.visit_mut(&join(prefix, "k"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        self.o.visit_mut(&join(prefix, "o"), f);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextRound<T: Real> {
    pub self_attn: Attention<T>,
    pub cross_attn: Attention<T>,
}

/// Input projection, interleaved self/cross attention rounds, output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextParams<T: Real> {
    pub config: ContextConfig,
    pub in_proj: Dense<T>,
    pub rounds: Vec<ContextRound<T>>,
    pub out_proj: Dense<T>,
}

impl<T: Real> ContextParams<T> {
    pub fn zeros(config: &ContextConfig, in_dim: usize) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let bias = Some((config.heads, config.buckets));
        Ok(Self {
            config: config.clone(),
            in_proj: Dense::zeros(w, in_dim),
            rounds: (0..config.rounds)
                .map(|_| ContextRound {
                    self_attn: Attention::zeros(w, bias),
                    cross_attn: Attention::zeros(w, None),
                })
                .collect(),
            out_proj: Dense::zeros(config.out_width, w),
        })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, config: &ContextConfig, in_dim: usize) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let bias = Some((config.heads, config.buckets));
        Ok(Self {
            config: config.clone(),
            in_proj: Dense::random(rng, w, in_dim),
            rounds: (0..config.rounds)
                .map(|_| ContextRound {
                    self_attn: Attention::random(rng, w, bias),
                    cross_attn: Attention::random(rng, w, None),
                })
                .collect(),
            out_proj: Dense::random(rng, config.out_width, w),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_proj.in_dim()
    }
}

impl<T: Real> Parameters<T> for ContextParams<T> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>)) {
        self.in_proj.visit_mut(&join(prefix, "in_proj"), f);
        for (r, round) in self.rounds.iter_mut().enumerate() {
            round.self_attn.visit_mut(&join(prefix, &format!("round{r}.self")), f);
            round.cross_attn.visit_mut(&join(prefix, &format!("round{r}.cross")), f);
        }
        self.out_proj.visit_mut(&join(prefix, "out_proj"), f);
    }
}

/// Piecewise-linear lookup of `table` at `d / width`, clamped to the last bucket.
pub fn distance_bias<T: Real>(table: &[T], d: f64, width: f64) -> T {
    let u = (d / width).max(0.0);
    let i = u.floor() as usize;
    if i + 1 >= table.len() {
        return table[table.len() - 1];
    }
    let frac = T::of_f64(u - i as f64);
    table[i] + (table[i + 1] - table[i]) * frac
}

/// Each row shifted to zero mean and scaled to unit variance (variance floored at `1e-6`).
pub fn layer_norm<T: Real>(x: &DMatrix<T>) -> DMatrix<T> {
    let n = T::of_f64(x.ncols().max(1) as f64);
    let mut out = x.clone();
    for mut r in out.row_iter_mut() {
        let mean = r.sum() / n;
        r.apply(|v| *v -= mean);
        let var = r.norm_squared() / n;
        r /= var.max(T::of_f64(1e-6)).sqrt();
    }
    out
}

fn attend<T: Real>(
    layer: &Attention<T>,
    heads: usize,
    x: &DMatrix<T>,
    y: &DMatrix<T>,
    bias: Option<(&PointCloud, f64)>,
) -> Result<DMatrix<T>> {
    let (xn, yn) = (layer_norm(x), layer_norm(y));
    let (q, k, v) = (
        layer.q.forward_rows(&xn)?,
        layer.k.forward_rows(&yn)?,
        layer.v.forward_rows(&yn)?,
    );
    let dh = q.ncols() / heads;
    let scale = T::of_f64(1.0 / (dh as f64).sqrt());
    let mut cat = DMatrix::<T>::zeros(x.nrows(), q.ncols());
    for h in 0..heads {
        let qh = q.columns(h * dh, dh);
        let kh = k.columns(h * dh, dh);
        let mut logits = qh * kh.transpose() * scale;
        if let (Some(table), Some((cloud, width))) = (&layer.bias, bias) {
            let row: Vec<T> = table.row(h).iter().copied().collect();
            for i in 0..logits.nrows() {
                for j in 0..logits.ncols() {
                    logits[(i, j)] += distance_bias(&row, (cloud[i] - cloud[j]).norm(), width);
                }
            }
        }
        for mut r in logits.row_iter_mut() {
            let m = r.iter().copied().fold(r[0], |a, b| a.max(b));
            r.apply(|v| *v = (*v - m).exp());
            let s = r.sum();
            r /= s;
        }
        cat.columns_mut(h * dh, dh).copy_from(&(logits * v.columns(h * dh, dh)));
    }
    Ok(x + layer.o.forward_rows(&cat)?)
}

fn stack<T: Real>(rows: &[crate::InvariantFeature<T>], dim: usize) -> Result<DMatrix<T>> {
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::dims("context input width", dim, r.len()));
    }
    Ok(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i].v[j]))
}

/// Context features for both superpoint sets. Each round applies shared-weight
/// self-attention (with a pairwise-distance bias) inside each cloud, then cross-attention
/// in both directions. Rows of the outputs follow the input order.
pub fn context_attention<T: Real>(
    params: &ContextParams<T>,
    x_p: &[crate::InvariantFeature<T>],
    x_q: &[crate::InvariantFeature<T>],
    p: &PointCloud,
    q: &PointCloud,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if x_p.len() != p.len() {
        return Err(Error::dims("source superpoint features", p.len(), x_p.len()));
    }
    if x_q.len() != q.len() {
        return Err(Error::dims("target superpoint features", q.len(), x_q.len()));
    }
    let cfg = &params.config;
    let mut hp = params.in_proj.forward_rows(&stack(x_p, params.in_dim())?)?;
    let mut hq = params.in_proj.forward_rows(&stack(x_q, params.in_dim())?)?;
    for round in &params.rounds {
        hp = attend(&round.self_attn, cfg.heads, &hp, &hp, Some((p, cfg.bucket_width)))?;
        hq = attend(&round.self_attn, cfg.heads, &hq, &hq, Some((q, cfg.bucket_width)))?;
        let np = attend(&round.cross_attn, cfg.heads, &hp, &hq, None)?;
        let nq = attend(&round.cross_attn, cfg.heads, &hq, &hp, None)?;
        (hp, hq) = (np, nq);
    }
    Ok((params.out_proj.forward_rows(&hp)?, params.out_proj.forward_rows(&hq)?))
}
