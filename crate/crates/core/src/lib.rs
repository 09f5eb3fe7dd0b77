//! Adversarial color and coordinate attacks on point cloud semantic
//! segmentation, with a small differentiable segmenter, input-filtering
//! defenses and the usual segmentation metrics.

pub mod attack;
pub mod defense;
pub mod diffcore;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod pointcloud;
pub mod segmodel;

pub use error::{Error, Result};
