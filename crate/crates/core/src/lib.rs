//! Bridge-scour early-warning toolkit.
//!
//! The crate follows the monitoring workflow end to end:
//!
//! 1. [`ingest`] parses raw stage/sonar/discharge CSVs, applies operator bias
//!    corrections and regrids readings onto a shared hourly timeline.
//! 2. [`preprocess`] removes outliers, imputes gaps, denoises and normalizes.
//! 3. [`dataset`] builds feature combinations and sliding windows.
//! 4. [`neural`] trains LSTM forecasters (single-shot, feedback, two-layer)
//!    plus persistence and dense reference models.
//! 5. [`harness`] runs grid searches and ensemble retraining.
//! 6. [`earlywarn`] turns ensembles into forecast bands, scour-depth
//!    distributions and alerts.
//!
//! [`synth`] generates bridge-monitoring series with known ground truth so
//! that every stage can be checked without field data.

// Parameter checks are written as `!(x > 0.0)` on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod earlywarn;
mod error;
pub mod exec;
pub mod harness;
pub mod ingest;
pub mod linalg;
pub mod neural;
pub mod plot;
pub mod preprocess;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
