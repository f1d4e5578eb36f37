//! Continual learning with fixed random classifiers and their rearrangement.

pub mod classifiers;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
