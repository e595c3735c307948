//! Two-stage panoramic-radiograph analysis for impacted third molars:
//! detection with quadrant/angulation labels, per-ROI pericoronitis
//! classification, class-activation heatmaps, and the evaluation tooling
//! around them.
//!
//! Start with [`pipeline::run_case`] for the end-to-end flow, or see the
//! `examples/` directory for one runnable program per capability.

pub mod classification;
pub mod dataset;
pub mod detection;
pub mod error;
pub mod explain;
pub mod graph;
pub mod imaging;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, Result};
