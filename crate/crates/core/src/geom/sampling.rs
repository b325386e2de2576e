use std::collections::BTreeMap;

use super::{KnnIndex, Point3, PointCloud};
use crate::{Error, Result};

/// One centroid per occupied voxel, ordered by ascending voxel coordinate.
///
/// Voxel index is `floor(coord / voxel)` per axis; a point on a cell boundary belongs to the
/// cell whose lower face it lies on.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    voxel_downsample_members(cloud, voxel).map(|(c, _)| c)
}

/// As [`voxel_downsample`], also returning the input indices averaged into each centroid.
pub fn voxel_downsample_members(cloud: &PointCloud, voxel: f64) -> Result<(PointCloud, Vec<Vec<usize>>)> {
    if !(voxel > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "voxel size must be positive, got {voxel}"
        )));
    }
    cloud.ensure_non_empty()?;
    let mut cells: BTreeMap<(i64, i64, i64), (Point3, Vec<usize>)> = BTreeMap::new();
    for (i, p) in cloud.iter().enumerate() {
        let key = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        let e = cells.entry(key).or_insert((Point3::zeros(), Vec::new()));
        e.0 += p;
        e.1.push(i);
    }
    let (centroids, members): (Vec<_>, Vec<_>) = cells.into_values().map(|(s, m)| (s / m.len() as f64, m)).unzip();
    Ok((PointCloud::new(centroids)?, members))
}

/// Dense-point to superpoint assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGrouping {
    groups: Vec<Vec<usize>>,
    owner: Vec<usize>,
}

impl NodeGrouping {
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, node: usize) -> &[usize] {
        &self.groups[node]
    }

    /// Superpoint owning each dense point.
    pub fn owner(&self) -> &[usize] {
        &self.owner
    }

    pub fn num_nodes(&self) -> usize {
        self.groups.len()
    }

    pub fn num_points(&self) -> usize {
        self.owner.len()
    }
}

/// Assigns each dense point to its nearest superpoint (lower index on ties).
pub fn point_to_node_group(dense: &PointCloud, nodes: &PointCloud) -> Result<NodeGrouping> {
    dense.ensure_non_empty()?;
    let index = KnnIndex::new(nodes)?;
    let owner: Vec<usize> = index.graph(dense, 1).rows().iter().map(|r| r[0]).collect();
    let mut groups = vec![Vec::new(); nodes.len()];
    for (i, &o) in owner.iter().enumerate() {
        groups[o].push(i);
    }
    Ok(NodeGrouping { groups, owner })
}
