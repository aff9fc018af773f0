use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::lr_find::LrFinderConfig;

/// A fixed step size or `"auto"`, which runs the learning-rate finder on the
/// training set before the first epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Fixed(f64),
    Auto,
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate::Fixed(1e-3)
    }
}

impl fmt::Display for LearningRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearningRate::Fixed(v) => write!(f, "{v}"),
            LearningRate::Auto => f.write_str("auto"),
        }
    }
}

impl std::str::FromStr for LearningRate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LearningRate::Auto);
        }
        s.parse::<f64>()
            .map(LearningRate::Fixed)
            .map_err(|_| format!("learning rate must be a number or \"auto\", got {s:?}"))
    }
}

impl Serialize for LearningRate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LearningRate::Fixed(v) => s.serialize_f64(*v),
            LearningRate::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for LearningRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(LearningRate::Fixed(v)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Training hyperparameters. Model selection always uses the mean of
/// validation SBP and DBP MAE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub effective_batch_size: usize,
    pub micro_batch_size: usize,
    pub epochs: usize,
    pub learning_rate: LearningRate,
    pub weight_decay: f64,
    /// Seeds the per-epoch shuffle and the learning-rate finder.
    pub seed: u64,
    pub lr_finder: LrFinderConfig,
    /// When set, every epoch's model is saved under `epoch_NNN/`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            effective_batch_size: 512,
            micro_batch_size: 64,
            epochs: 50,
            learning_rate: LearningRate::default(),
            weight_decay: 0.01,
            seed: 0,
            lr_finder: LrFinderConfig::default(),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.micro_batch_size == 0 || self.effective_batch_size == 0 {
            return Err("batch sizes must be positive".into());
        }
        if !self.effective_batch_size.is_multiple_of(self.micro_batch_size) {
            return Err(format!(
                "effective_batch_size {} is not a multiple of micro_batch_size {}",
                self.effective_batch_size, self.micro_batch_size
            ));
        }
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if let LearningRate::Fixed(lr) = self.learning_rate {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(format!("learning rate must be positive, got {lr}"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err("weight_decay must be finite and >= 0".into());
        }
        self.lr_finder.validate()
    }
}
