//! Automatic 6D pose, mask and bounding-box annotation for images from fixed
//! cameras in a motion-capture tracked space.
//!
//! The pipeline has three phases:
//!
//! 1. **Camera localization** ([`board`], [`pnp`], [`calib`]): tracked
//!    checkerboard placements give 2D-3D correspondences in the
//!    motion-capture frame; PnP yields each camera's pose, optionally tuned
//!    against hand-made masks.
//! 2. **Relative poses** ([`annotate::relative_pose`]): object poses are
//!    re-expressed in each camera frame.
//! 3. **Annotation** ([`mesh_render`], [`annotate`], [`bop_io`]): object meshes
//!    are rasterized at those poses to masks, bounding boxes and mock depth,
//!    written in a BOP-style layout.
//!
//! [`synth`] generates synthetic rigs, sessions and recordings with known
//! ground truth for verification.

pub mod annotate;
pub mod board;
pub mod bop_io;
pub mod calib;
pub mod cli;
pub mod config;
pub mod geometry;
pub mod mesh_render;
pub mod pnp;
pub mod synth;

pub use geometry::{CameraIntrinsics, Point2, Point3, Pose, Rotation, Vector3};

pub type CameraId = u32;
pub type ObjectId = u32;
