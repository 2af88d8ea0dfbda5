//! Optimizing over the space of per-component descriptions of a multivariate
//! system to trace the extremes of total correlation and O-information.

pub mod channels;
pub mod error;
pub mod estimators;
pub mod infotheory;
pub mod nn;
pub mod objective;
pub mod sampling;
pub mod systems;
pub mod trainer;

pub use error::{Error, Result};
