//! Point clouds, rigid motions and the spatial primitives used by every other module.

mod cloud;
mod crop;
mod knn;
mod sampling;
mod transform;

pub use cloud::{Point3, PointCloud};
pub use crop::{overlap_mask, overlap_ratio, random_crop, random_crop_indices};
pub use knn::{knn, KnnIndex, NeighborGraph, EXHAUSTIVE_LIMIT};
pub use sampling::{point_to_node_group, voxel_downsample, voxel_downsample_members, NodeGrouping};
pub use transform::{apply_transform, compose, random_rotation, random_rotation_with, RigidTransform, Rotation};
