//! Named parameter traversal shared by initialisation, precision casts and weight I/O.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;

use crate::{Error, Real, Result};

/// Every learnable tensor of a layer, visited in a fixed order under a dotted name.
pub trait Parameters<T: Real> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut DMatrix<T>));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Ordered `(name, tensor)` list in `f64`.
pub type NamedTensors = Vec<(String, DMatrix<f64>)>;

pub fn export<T: Real, P: Parameters<T> + Clone>(p: &P) -> NamedTensors {
    let mut out = Vec::new();
    p.clone().visit_mut("", &mut |name, m| {
        out.push((name.to_string(), m.map(|v| v.as_f64())));
    });
    out
}

/// Fills every tensor of `p` from `tensors`. Names and shapes must match exactly and every
/// provided tensor must be consumed.
pub fn import<T: Real, P: Parameters<T>>(p: &mut P, tensors: &NamedTensors) -> Result<()> {
    let by_name: BTreeMap<&str, &DMatrix<f64>> = tensors.iter().map(|(n, m)| (n.as_str(), m)).collect();
    let mut err: Option<Error> = None;
    let mut used = 0usize;
    p.visit_mut("", &mut |name, m| {
        if err.is_some() {
            return;
        }
        match by_name.get(name) {
            None => err = Some(Error::Weights(format!("missing tensor `{name}`"))),
            Some(src) if src.shape() != m.shape() => {
                err = Some(Error::Weights(format!(
                    "tensor `{name}` has shape {:?}, config expects {:?}",
                    src.shape(),
                    m.shape()
                )))
            }
            Some(src) => {
                used += 1;
                *m = src.map(T::of_f64);
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if used != by_name.len() {
        let mut known = Vec::new();
        p.visit_mut("", &mut |name, _| known.push(name.to_string()));
        let extra = by_name
            .keys()
            .find(|k| !known.iter().any(|n| n == *k))
            .map(|s| s.to_string())
            .unwrap_or_default();
        return Err(Error::Weights(format!("unexpected tensor `{extra}`")));
    }
    Ok(())
}

/// Copies parameters across precisions through a template of the target type.
pub fn cast_into<T: Real, U: Real, P: Parameters<T> + Clone, Q: Parameters<U>>(src: &P, mut template: Q) -> Q {
    import(&mut template, &export(src)).expect("source and template share a layout");
    template
}

pub fn count<T: Real, P: Parameters<T> + Clone>(p: &P) -> usize {
    export(p).iter().map(|(_, m)| m.len()).sum()
}

/// Uniform entries in `[-a, a]`.
pub fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, a: f64) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| T::of_f64((rng.random::<f64>() * 2.0 - 1.0) * a))
}
