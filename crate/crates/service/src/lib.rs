//! Operator surface for the detection toolkit: the `tsad` command line and
//! an HTTP service that keeps per-series state, streams detections, collects
//! feedback and re-selects detectors when a series drifts.

pub mod api;
pub mod cli;
pub mod error;
pub mod journal;
pub mod state;

pub use error::{ServiceError, ServiceResult};

/// Carried by every HTTP response body.
pub const API_SCHEMA_VERSION: u32 = 1;
