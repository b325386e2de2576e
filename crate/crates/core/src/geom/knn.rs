use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

use super::{Point3, PointCloud};
use crate::{Error, Result};

/// Reference clouds up to this size are searched exhaustively; larger ones use grid buckets.
pub const EXHAUSTIVE_LIMIT: usize = 2000;

/// Per-query neighbour lists, ascending by distance, ties broken by lower index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborGraph {
    indices: Vec<Vec<usize>>,
    sq_dists: Vec<Vec<f64>>,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, query: usize) -> &[usize] {
        &self.indices[query]
    }

    pub fn sq_distances(&self, query: usize) -> &[f64] {
        &self.sq_dists[query]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.indices
    }
}

#[inline]
fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn cmp_candidate(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn keep_k_smallest(cands: &mut Vec<(f64, usize)>, k: usize) {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, cmp_candidate);
        cands.truncate(k);
    }
    cands.sort_unstable_by(cmp_candidate);
}

type Cell = (i64, i64, i64);

#[derive(Debug, Clone)]
struct Grid {
    origin: Point3,
    cell: f64,
    lo: Cell,
    hi: Cell,
    buckets: HashMap<Cell, Vec<usize>>,
}

impl Grid {
    fn build(points: &[Point3]) -> Self {
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        let extent = (max - min).max().max(1e-9);
        let cell = extent / (points.len() as f64).cbrt().ceil().max(1.0);
        let mut grid = Grid {
            origin: min,
            cell,
            lo: (i64::MAX, i64::MAX, i64::MAX),
            hi: (i64::MIN, i64::MIN, i64::MIN),
            buckets: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let c = grid.cell_of(p);
            grid.lo = (grid.lo.0.min(c.0), grid.lo.1.min(c.1), grid.lo.2.min(c.2));
            grid.hi = (grid.hi.0.max(c.0), grid.hi.1.max(c.1), grid.hi.2.max(c.2));
            grid.buckets.entry(c).or_default().push(i);
        }
        grid
    }

    fn cell_of(&self, p: &Point3) -> Cell {
        let q = (p - self.origin) / self.cell;
        (q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64)
    }

    fn search(&self, points: &[Point3], q: &Point3, k: usize) -> Vec<(f64, usize)> {
        let c = self.cell_of(q);
        let max_ring = [
            (c.0 - self.lo.0).abs(),
            (self.hi.0 - c.0).abs(),
            (c.1 - self.lo.1).abs(),
            (self.hi.1 - c.1).abs(),
            (c.2 - self.lo.2).abs(),
            (self.hi.2 - c.2).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        let mut cands: Vec<(f64, usize)> = Vec::new();
        for r in 0..=max_ring {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(b) = self.buckets.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                            cands.extend(b.iter().map(|&i| (sq_dist(q, &points[i]), i)));
                        }
                    }
                }
            }
            if cands.len() >= k {
                keep_k_smallest(&mut cands, k);
                // Every unvisited point lies outside the (2r+1)^3 block around c.
                let local = (q - self.origin) / self.cell;
                let lc = Point3::new(c.0 as f64, c.1 as f64, c.2 as f64);
                let lo = local - (lc - Point3::repeat(r as f64));
                let hi = lc + Point3::repeat(r as f64 + 1.0) - local;
                let bound = lo.min().min(hi.min()).max(0.0) * self.cell;
                if cands[k - 1].0 < bound * bound {
                    return cands;
                }
            }
        }
        keep_k_smallest(&mut cands, k);
        cands
    }
}

/// Exact k-NN index over a fixed reference cloud.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: Vec<Point3>,
    grid: Option<Grid>,
}

impl KnnIndex {
    pub fn new(reference: &PointCloud) -> Result<Self> {
        reference.ensure_non_empty()?;
        let grid = (reference.len() > EXHAUSTIVE_LIMIT).then(|| Grid::build(reference.points()));
        Ok(Self {
            points: reference.points().to_vec(),
            grid,
        })
    }

    /// Forces the exhaustive backend regardless of size.
    pub fn exhaustive(reference: &PointCloud) -> Result<Self> {
        reference.ensure_non_empty()?;
        Ok(Self {
            points: reference.points().to_vec(),
            grid: None,
        })
    }

    /// Forces the grid backend regardless of size.
    pub fn bucketed(reference: &PointCloud) -> Result<Self> {
        reference.ensure_non_empty()?;
        Ok(Self {
            points: reference.points().to_vec(),
            grid: Some(Grid::build(reference.points())),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(squared distance, index)` pairs, ascending.
    pub fn query(&self, q: &Point3, k: usize) -> Vec<(f64, usize)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        match &self.grid {
            Some(g) => g.search(&self.points, q, k),
            None => {
                let mut cands: Vec<(f64, usize)> = self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (sq_dist(q, p), i))
                    .collect();
                keep_k_smallest(&mut cands, k);
                cands
            }
        }
    }

    pub fn nearest(&self, q: &Point3) -> (f64, usize) {
        self.query(q, 1)[0]
    }

    pub fn graph(&self, queries: &PointCloud, k: usize) -> NeighborGraph {
        let rows: Vec<Vec<(f64, usize)>> = queries.points().par_iter().map(|q| self.query(q, k)).collect();
        let (indices, sq_dists) = rows
            .into_iter()
            .map(|row| row.into_iter().map(|(d, i)| (i, d)).unzip())
            .unzip();
        NeighborGraph { indices, sq_dists }
    }
}

/// Exact k nearest neighbours of every query point in `reference`.
pub fn knn(reference: &PointCloud, queries: &PointCloud, k: usize) -> Result<NeighborGraph> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(KnnIndex::new(reference)?.graph(queries, k))
}
