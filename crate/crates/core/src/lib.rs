//! Point-cloud completion with a coarse graph network followed by
//! weight-shared refinement blocks unrolled in time with feedback.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod fbac;
pub mod geometry;
pub mod hgnet;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use geometry::PointCloud;
