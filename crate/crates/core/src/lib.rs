//! Rotation-equivariant point cloud registration.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`]: point clouds, rigid motions, k-NN, voxel sampling, grouping and cropping.
//! * [`linalg`]: the 3x3 Jacobi SVD used by every closed-form rotation fit.
//! * [`vn`]: vector-neuron layers (linear, ReLU, L2 normalisation, invariant head).
//! * [`pareconv`]: position-aware equivariant convolution, residual blocks and the backbone.
//! * [`matching`]: attention context, superpoint matching and patch-local point matching.
//! * [`estimator`]: Procrustes, the feature-based hypothesis proposer, refinement, LGR and RANSAC.
//! * [`losses`] and [`metrics`]: training losses with analytic gradients and evaluation metrics.
//! * [`pipeline`]: the full network and conversion of matches into estimator input.
//! * [`io`]: XYZ/PLY clouds, transform/correspondence/hypothesis JSON and the weight container.
//!
//! Vector features are `C x 3` matrices whose rows rotate as `F -> F R^T` when the
//! underlying cloud is rotated by `R`.

pub mod dense;
pub mod error;
pub mod estimator;
pub mod geom;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod params;
pub mod pareconv;
pub mod pipeline;
pub mod real;
pub mod vn;

pub use error::{Error, Result};
pub use geom::{NeighborGraph, NodeGrouping, Point3, PointCloud, RigidTransform, Rotation};
pub use real::Real;
pub use vn::{InvariantFeature, VectorFeature};
