//! One-dimensional regression networks predicting (SBP, DBP) from a PPG
//! segment, on a small reverse-mode autodiff engine.
//!
//! Architectures: [`Architecture::LeNet1d`], [`Architecture::XResNet1d50`],
//! [`Architecture::XResNet1d101`], [`Architecture::Inception1d`] and
//! [`Architecture::S4`]. All end in global average pooling and a two-unit
//! linear head, so any input length at or above the architecture's minimum
//! is accepted. Layer tables live in the [`arch`] submodules.

pub mod arch;
pub mod checkpoint;
mod model;
pub mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, round_to_f32, save_checkpoint};
pub use model::{
    build_model, Architecture, Gradients, Model, ModelError, ModelSpec, WeightedMse, BN_MOMENTUM, INPUT_NORM,
    OUTPUT_NORM,
};
pub use tape::{BnUpdate, Mode};
pub use tensor::Tensor;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
