//! Multi-view consistency scoring for generated image sequences.
//!
//! Pairs of frames are lifted to a shared 3D point map, both images' features
//! are splatted into the first camera, and their agreement is measured over
//! the region both views cover.

pub mod api;
pub mod backends;
pub mod baselines;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod imageio;
pub mod metric;
pub mod model;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
pub use metric::{met3r_pair, MetricOptions, Variant};
pub use model::{CameraIntrinsics, FeatureGrid, ImageFrame, PairScore, PointMapPair, Pose, ProjectionResult, Psnr};
