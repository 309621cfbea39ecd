//! Self-supervised embodied active learning on synthetic indoor scenes.
//!
//! An agent explores procedurally generated rooms, fuses noisy per-pixel
//! semantic scores into a voxel map, labels its own frames by ray tracing
//! through the consolidated map and recalibrates its perception model on
//! those labels.

pub mod envsim;
pub mod error;
pub mod evalharness;
pub mod geometry;
pub mod labelprop;
pub mod perception;
pub mod policy;
pub mod seeding;
pub mod semmap;

pub use error::{Result, SealError};
pub use geometry::{CameraModel, DepthImage, PointCloud, Pose};
