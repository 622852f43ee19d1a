//! Representation-based transfer learning for high-dimensional vector
//! autoregressions.
//!
//! Shared response, predictor and temporal representations are learned from
//! several source series and transferred to a short target series. The crate
//! contains the tensor algebra, VAR simulation, the two-stage estimator, its
//! initialization and tuning rules, and the comparator estimators.

pub mod baselines;
pub mod error;
pub mod estimator;
pub mod selection;
pub mod tensor;
pub mod var;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::{Matrix, Mode, Tensor3, TuckerFactors, Vector};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
