use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::params::NamedTensors;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PAREW1\0\0";

/// Serialises tensors as: magic, then per tensor `u32 name length, name, u32 rank (2),
/// u32 rows, u32 cols, f32 payload`, all little endian and row-major.
pub fn encode_weights(tensors: &NamedTensors) -> Result<Vec<u8>> {
    let mut seen = BTreeSet::new();
    let mut out = MAGIC.to_vec();
    for (name, m) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(Error::Weights(format!("duplicate tensor name {name:?}")));
        }
        let u32_of = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Weights(format!("{what} of {name:?} exceeds u32")))
        };
        out.extend_from_slice(&u32_of(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&u32_of(m.nrows(), "rows")?.to_le_bytes());
        out.extend_from_slice(&u32_of(m.ncols(), "cols")?.to_le_bytes());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.extend_from_slice(&(m[(i, j)] as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Weights(format!(
                    "truncated container: {what} needs {n} bytes at offset {}, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<NamedTensors> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Weights("bad magic".into()));
    }
    let mut c = Cursor {
        bytes,
        pos: MAGIC.len(),
    };
    let mut out: NamedTensors = Vec::new();
    let mut seen = BTreeSet::new();
    while c.pos < bytes.len() {
        let len = c.u32("name length")?;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Weights("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")?;
        let dims: Vec<usize> = (0..rank).map(|_| c.u32("dims")).collect::<Result<_>>()?;
        let (rows, cols) = match dims.as_slice() {
            [r, c] => (*r, *c),
            [n] => (*n, 1),
            [] => (1, 1),
            _ => return Err(Error::Weights(format!("{name}: rank {rank} unsupported"))),
        };
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Weights(format!("{name}: size overflow")))?;
        let payload = c.take(n, &format!("payload of {name}"))?;
        let vals: Vec<f64> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        if !seen.insert(name.clone()) {
            return Err(Error::Weights(format!("duplicate tensor name {name:?}")));
        }
        out.push((name, DMatrix::from_row_slice(rows, cols, &vals)));
    }
    Ok(out)
}

pub fn save_weights(tensors: &NamedTensors, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_weights(tensors)?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<NamedTensors> {
    decode_weights(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensors {
        vec![
            (
                "a.w".into(),
                DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]),
            ),
            ("b".into(), DMatrix::from_row_slice(1, 1, &[-0.25])),
            ("empty".into(), DMatrix::zeros(0, 4)),
        ]
    }

    #[test]
    fn layout_is_exact() {
        let b = encode_weights(&sample()[1..2].to_vec()).unwrap();
        let mut want = MAGIC.to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.push(b'b');
        for v in [2u32, 1, 1] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        want.extend_from_slice(&(-0.25f32).to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn round_trip_bytes_stable() {
        let b1 = encode_weights(&sample()).unwrap();
        let back = decode_weights(&b1).unwrap();
        assert_eq!(back, sample());
        assert_eq!(encode_weights(&back).unwrap(), b1);
    }

    #[test]
    fn truncation_and_corruption() {
        let b = encode_weights(&sample()).unwrap();
        for cut in [3, 8 + 2, 8 + 4 + 1, b.len() - 1] {
            assert!(matches!(decode_weights(&b[..cut]), Err(Error::Weights(_))), "cut {cut}");
        }
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_weights(&bad).is_err());
        let dup = vec![sample()[1].clone(), sample()[1].clone()];
        assert!(encode_weights(&dup).is_err());
    }
}
