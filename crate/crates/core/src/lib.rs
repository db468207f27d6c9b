//! Cluster-count determination for Bayesian cluster-randomized trials.
//!
//! Sampling distributions of posterior probabilities are simulated at two
//! cluster counts; their logits are joined rank by rank with straight lines,
//! which predicts the operating characteristics at every other cluster count.

pub mod artifacts;
pub mod config;
pub mod datagen;
pub mod error;
pub mod estimand;
pub mod gcomp;
pub mod glmm;
pub mod numeric;
pub mod proxy;
pub mod rng;
pub mod ssd;
pub mod study;

pub use error::{Error, Result};
