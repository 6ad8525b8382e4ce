//! Self-certified learning with probabilistic neural networks.
//!
//! A probabilistic network (a diagonal Gaussian over the weights of a small
//! fully connected classifier) is trained by minimising a PAC-Bayes-quadratic
//! objective and certified with the PAC-Bayes-kl bound, using all available
//! data. Deterministic networks trained by ERM and certified with Chernoff or
//! binomial test-set bounds serve as the baseline.

pub mod bounds;
pub mod certify;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod model_io;
pub mod pnn;
pub mod rng;

pub use error::{Error, Result};
