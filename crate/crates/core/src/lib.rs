//! Evaluation engine for probabilistic forecasts on binary prediction markets.
//!
//! Forecasts are scored along three axes: forecasting loss (event-weighted
//! Brier score), calibration (binned ECE), and market return (payoff of the
//! utility-optimal bet at the prevailing price). Symmetric bootstrap intervals,
//! logical-consistency scores, a forecast-time scheduler, and a synthetic
//! market generator round out the toolkit.

pub mod betting;
pub mod bootstrap;
pub mod consistency;
pub mod error;
pub mod ingest;
pub mod model;
pub mod report;
pub mod schedule;
pub mod scoring;
pub mod simulate;

pub use error::{Error, Result};
