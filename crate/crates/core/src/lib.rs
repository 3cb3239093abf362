//! Wind farm generation modeling and storage-aware dispatch.
//!
//! This crate provides:
//!
//! - [`series`]: validated hourly multivariate time series, CSV
//!   ingestion, train/test splitting, window batching, and deterministic
//!   synthetic datasets;
//! - [`econ`]: farm and storage cost parameters, LCOE, COVE, value
//!   factor, and annual delivery/curtailment/utilization reports;
//! - [`dispatch`]: the storage-constrained per-step settlement, a
//!   streaming simulator, and the baseload (peak-shaving) baseline;
//! - [`nn`]: a small LSTM + feedforward numerical core with hand-rolled
//!   reverse-mode gradients, Adam, and a finite-difference checker;
//! - [`nqf`]: a quantile-conditioned recurrent generation model trained
//!   with a CRPS loss, sampled with a smooth random walk over quantile
//!   levels;
//! - [`cove`]: a dispatch network trained end-to-end through the storage
//!   settlement with an unsupervised cost-of-valued-energy loss;
//! - [`metrics`]: RMSE, cross correlation, and power-curve similarity;
//! - [`tuner`]: the storage grid search and the random hyperparameter
//!   search with early termination.
//!
//! The `parallel` feature (on by default) runs data-parallel inner loops
//! on a rayon pool; reductions are order-fixed, so results are identical
//! with and without it.

pub mod cove;
pub mod dispatch;
pub mod econ;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod nn;
pub mod nqf;
mod rng;
pub mod series;
pub mod tuner;

pub use error::{Error, Result};
