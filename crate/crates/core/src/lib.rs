//! Monocular 3D detection geometry and evaluation.
//!
//! The distance of an object is decomposed into its physical height `H` and
//! the reciprocal of its projected visual height `h_rec`, so that
//! `Z = f * H * h_rec`. This crate provides the camera model, the box
//! geometry, the decomposition itself, the uncertainty-aware regression
//! losses with analytic gradients, confidence re-scoring, KITTI file I/O,
//! the AP|R40 evaluation stack and a Monte-Carlo simulator.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boxes;
pub mod camera;
pub mod distance;
pub mod error;
pub mod eval;
pub mod kitti_io;
pub mod losses;
pub mod scoring;
pub mod simulate;

pub use boxes::{Box2D, Box3D, PhysicalSize, YawEncoding};
pub use camera::{CameraPoint, Keypoint, ProjectionMatrix};
pub use distance::DistanceFactors;
pub use error::{Error, Result};
pub use scoring::{DetectionRecord, ScoreMode};
