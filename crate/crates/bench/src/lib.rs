//! Train-by-test benchmark grids.
//!
//! [`run_grid`] trains one model per train set (one per cell when training
//! with label-shift weights) and evaluates it on every test set;
//! [`mark_top_k`] and [`diff_grids`] annotate and compare the resulting
//! matrices; [`render`] writes them as CSV and Markdown; [`run_experiment`]
//! drives the whole pipeline from a JSON config.

mod diff;
mod emd_table;
mod experiment;
mod grid;
pub mod manifest;
pub mod render;
mod run;

use thiserror::Error;

pub use diff::{diff_grids, DiffGrid, MaeDelta};
pub use emd_table::{emd_mae_table, pearson, EmdInput, EmdMaeTable, EmdRow};
pub use experiment::{
    load_split, run_experiment, ExperimentConfig, ExperimentOutcome, SplitSource, TestSetConfig, TrainSetConfig,
    WeightingMode,
};
pub use grid::{mark_top_k, Cell, CellMetrics, Flags, GridReport};
pub use manifest::RunManifest;
pub use run::{run_grid, GridOutcome, GridSpec, TestSet, TrainSet, TrainingRecord, WeightingConfig};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("grid shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("malformed report file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] ppgbench_core::data::DataError),
    #[error(transparent)]
    Split(#[from] ppgbench_core::splits::SplitError),
    #[error(transparent)]
    Adaptation(#[from] ppgbench_core::adaptation::AdaptationError),
}
