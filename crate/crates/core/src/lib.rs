//! Dataset plumbing and evaluation primitives for PPG blood-pressure
//! benchmarking.
//!
//! * [`data`] holds the segment container, its on-disk format, CSV ingestion
//!   and a seeded synthetic PPG generator.
//! * [`splits`] builds Calib / CalibFree / AAMI train-validation-test
//!   assignments.
//! * [`adaptation`] computes label histograms, label-shift importance weights
//!   and the Earth Mover's Distance between label distributions.
//! * [`metrics`] implements MAE, MASE against a training-median baseline and
//!   IEEE-style grading.

pub mod adaptation;
pub mod data;
pub mod metrics;
pub mod splits;

pub use adaptation::{HistogramBinning, LabelHistogram, WeightTable};
pub use data::{DatasetBundle, SegmentRecord, SynthConfig, ValidationReport};
pub use metrics::{BpPair, EvalResult};
pub use splits::{Role, Scenario, SplitAssignment, SplitSpec};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
