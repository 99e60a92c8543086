//! Kernels for two-stage 3D object detection on raw point clouds.
//!
//! The crate covers the whole forward path of a detector that voxelizes
//! locally around key-points instead of over the full scene:
//!
//! * [`sampling`]: one-point-per-cell grid downsampling (dense write-once
//!   buffer or sort-by-cell).
//! * [`voxelization`]: radius queries through a spatial grid and average
//!   pooling into `k x k x k` local voxel tensors.
//! * [`pointconv`]: dense 3D convolution of each local tensor down to a single
//!   feature vector, stacked into a four-block backbone.
//! * [`roipool`]: location-aware RoI pooling with exponential distance weights
//!   and the valid-padding refinement head.
//! * [`iou`]: rotated 3D IoU via BEV polygon intersection, differentiable
//!   through forward-mode [`dual`] numbers.
//! * [`losses`]: the classification, rotation, flip and confidence terms and
//!   their weighted compositions.
//! * [`pipeline`]: KITTI ingestion, synthetic scenes, the forward pass and
//!   the scaling benchmark.
//! * [`verification`]: independent oracles (Monte Carlo IoU, polygon
//!   clipping, brute-force neighbors, finite differences).

pub mod dual;
pub mod error;
pub mod geom;
pub mod iou;
pub mod losses;
pub mod pipeline;
pub mod pointconv;
pub mod roipool;
pub mod sampling;
pub mod verification;
pub mod voxelization;

mod util;

pub use dual::{Dual, Scalar};
pub use error::{Error, Result};
pub use geom::{box_corners_bev, cell_of, CellIndex, Lattice, LocalVoxelTensor, OrientedBox, Point3, PointCloud};
