use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::estimator::Hypothesis;
use crate::matching::PointMatch;
use crate::{Result, RigidTransform};

/// One correspondence row: source index, target index, score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceRecord {
    pub xi: usize,
    pub yi: usize,
    pub score: f64,
}

impl From<&PointMatch> for CorrespondenceRecord {
    fn from(m: &PointMatch) -> Self {
        Self {
            xi: m.x,
            yi: m.y,
            score: m.score,
        }
    }
}

pub fn correspondences_to_csv(records: &[CorrespondenceRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(["xi", "yi", "score"])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn correspondences_from_csv(bytes: &[u8]) -> Result<Vec<CorrespondenceRecord>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Into::into)
}

pub fn write_correspondences_csv(records: &[CorrespondenceRecord], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, correspondences_to_csv(records)?)?;
    Ok(())
}

pub fn read_correspondences_csv(path: impl AsRef<Path>) -> Result<Vec<CorrespondenceRecord>> {
    correspondences_from_csv(&fs::read(path)?)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn read_transform(path: impl AsRef<Path>) -> Result<RigidTransform> {
    read_json(path)
}

pub fn write_transform(t: &RigidTransform, path: impl AsRef<Path>) -> Result<()> {
    write_json(t, path)
}

pub fn read_hypothesis(path: impl AsRef<Path>) -> Result<Hypothesis> {
    read_json(path)
}

pub fn write_hypothesis(h: &Hypothesis, path: impl AsRef<Path>) -> Result<()> {
    write_json(h, path)
}
