//! Experiment harness: CSV ingestion and transforms, accuracy metrics,
//! simulation sweeps, rolling forecasts and result serialization.

pub mod app;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod methods;
pub mod metrics;
pub mod output;

pub use error::{HarnessError, Result};
