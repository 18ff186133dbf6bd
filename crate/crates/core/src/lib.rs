//! Deep landmark risk modelling on ICU vital-sign streams.
//!
//! The pipeline simulates a cohort, cuts minute-level monitor data into
//! labelled instances, trains a 1-D CNN on them, feeds the CNN score into a
//! landmark cause-specific Cox model and explains the CNN with saliency maps.

pub mod cohortsim;
pub mod convnet;
pub mod error;
pub mod instances;
pub mod kv;
pub mod landmark;
pub mod metrics;
pub mod pipeline;
pub mod saliency;
pub mod scalar;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network32 = convnet::Network<f32>;
pub type Network64 = convnet::Network<f64>;
pub type Sample32 = convnet::Sample<f32>;
pub type Sample64 = convnet::Sample<f64>;
