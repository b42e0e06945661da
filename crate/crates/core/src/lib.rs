//! Weakly-supervised semantic segmentation of point clouds with hierarchical
//! semantic queries.
//!
//! A point encoder turns a cloud into four levels of (positions, features).
//! The query head takes any 3D position, interpolates the K nearest features
//! at every level, concatenates them and classifies the result. Training only
//! ever queries labeled points, so a tiny fraction of annotations is enough
//! to supervise the whole encoder.

pub mod config;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod pointcloud;
pub mod query;
pub mod tensor;
pub mod trainer;
pub mod weak_labels;

pub use error::{Error, Result};
pub use pointcloud::{ClassId, PointCloud, SpatialIndex};
