//! Importance-weighted empirical risk minimization for BP regressors.
//!
//! [`train`] runs AdamW over effective batches assembled from micro-batches,
//! evaluates validation MAE after every epoch and returns the best-epoch
//! model together with its [`TrainHistory`].

mod config;
mod history;
mod loss;
pub mod lr_find;
mod optim;
mod trainer;

pub use config::{LearningRate, TrainConfig};
pub use history::{EpochRecord, TrainHistory};
pub use loss::{unweighted_mse_sum, weighted_loss, LossError};
pub use lr_find::{find_lr, lr_find, LrFindResult, LrFinderConfig, LrSweep};
pub use optim::AdamW;
pub use trainer::{accumulate_gradients, batch_tensor, predict, train, Accumulated, TrainError, TrainedModel};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
