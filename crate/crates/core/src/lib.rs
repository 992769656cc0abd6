//! Time-series anomaly detection with per-series detector selection and a
//! single-knob sensitivity control.

pub mod benchmark;
pub mod corpus;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod io;
pub mod selector;
pub mod series;
mod stats;
pub mod transforms;
pub mod tuning;

pub use error::{Error, Result};
