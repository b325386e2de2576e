//! File formats: XYZ and binary PLY clouds, JSON/CSV records and the weight container.

mod cloud;
mod records;
mod weights;

pub use cloud::{
    parse_ply, parse_xyz, ply_bytes, read_cloud, read_ply, read_xyz, write_cloud, write_ply, write_xyz, write_xyz_to,
};
pub use records::{
    correspondences_from_csv, correspondences_to_csv, read_correspondences_csv, read_hypothesis, read_json,
    read_transform, write_correspondences_csv, write_hypothesis, write_json, write_transform, CorrespondenceRecord,
};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, MAGIC};
