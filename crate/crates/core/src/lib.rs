//! Split conformal prediction for point forecasters on time series, with a
//! benchmark harness that scores coverage, interval width and accuracy.
//!
//! Any forecaster that produces point forecasts (built-in statistical
//! baselines or an external model behind the adapter protocol) is wrapped
//! with distribution-free prediction intervals calibrated on held-out
//! absolute errors.

pub mod bridge;
pub mod conformal;
pub mod datasets;
mod decimal;
pub mod domain;
pub mod forecasters;
pub mod harness;
pub mod metrics;
