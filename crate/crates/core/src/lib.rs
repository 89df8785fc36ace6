//! Relative pose regression for RGBD visual localization.
//!
//! A query image is localized against a map of posed RGBD frames: global
//! descriptors retrieve the nearest map frames, a two-layer network regresses
//! the relative pose to each (a global-correlation coarse layer followed by a
//! depth-warped local-correlation refinement), and the candidates are ranked
//! by how well the query features agree with the reference after warping.

pub mod correlation;
pub mod data;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod model;
pub mod params;
pub mod pose_var;
pub mod retrieval;
pub mod selection;
pub mod synthetic;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, DepthMap, FlowField, Pose9D, RigidTransform};
pub use tensor::Tensor;
