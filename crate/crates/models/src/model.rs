use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch;
use crate::tape::{BnUpdate, Mode, Tape, Var};
use crate::tensor::Tensor;

/// Running-statistics momentum of every batch-norm layer.
pub const BN_MOMENTUM: f64 = 0.1;

/// Rows per parallel chunk in [`Model::forward`].
const FORWARD_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "lenet1d")]
    LeNet1d,
    #[serde(rename = "xresnet1d50")]
    XResNet1d50,
    #[serde(rename = "xresnet1d101")]
    XResNet1d101,
    #[serde(rename = "inception1d")]
    Inception1d,
    #[serde(rename = "s4")]
    S4,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::LeNet1d,
        Architecture::XResNet1d50,
        Architecture::XResNet1d101,
        Architecture::Inception1d,
        Architecture::S4,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::LeNet1d => "lenet1d",
            Self::XResNet1d50 => "xresnet1d50",
            Self::XResNet1d101 => "xresnet1d101",
            Self::Inception1d => "inception1d",
            Self::S4 => "s4",
        }
    }

    /// Total temporal downsampling factor times two.
    pub fn minimum_input_length(self) -> usize {
        match self {
            Self::LeNet1d => arch::lenet::MIN_LENGTH,
            Self::XResNet1d50 | Self::XResNet1d101 => arch::xresnet::MIN_LENGTH,
            Self::Inception1d => arch::inception::MIN_LENGTH,
            Self::S4 => arch::s4::MIN_LENGTH,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| ModelError::UnknownArchitecture(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    #[serde(default = "one")]
    pub width_multiplier: f64,
    #[serde(default = "one_usize")]
    pub input_channels: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl ModelSpec {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            width_multiplier: 1.0,
            input_channels: 1,
            seed: 0,
        }
    }

    pub fn with_width(mut self, w: f64) -> Self {
        self.width_multiplier = w;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(ModelError::InvalidSpec("width_multiplier must be positive".into()));
        }
        if self.input_channels == 0 {
            return Err(ModelError::InvalidSpec("input_channels must be at least 1".into()));
        }
        Ok(())
    }

    /// Channel count `c` scaled by the width multiplier, at least 1.
    pub fn ch(&self, c: usize) -> usize {
        ((c as f64 * self.width_multiplier).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("unknown architecture {0:?} (expected lenet1d, xresnet1d50, xresnet1d101, inception1d or s4)")]
    UnknownArchitecture(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("input length {length} is below the minimum input length {minimum} of {architecture}")]
    InputTooShort {
        architecture: Architecture,
        length: usize,
        minimum: usize,
    },
    #[error("expected input shape [n, {channels}, length], got {shape:?}")]
    BadInputShape { channels: usize, shape: Vec<usize> },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("target/weight count {got} does not match batch size {batch}")]
    TargetMismatch { batch: usize, got: usize },
    #[error("non-finite loss produced by sample {sample} of the batch")]
    NonFiniteLoss { sample: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Deterministic parameter initializer.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

impl Init {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    fn normal(&mut self, n: usize, sd: f64) -> Vec<f64> {
        let d = Normal::new(0.0, sd).expect("positive sd");
        (0..n).map(|_| d.sample(&mut self.rng)).collect()
    }

    pub fn uniform(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        let d = Uniform::new(lo, hi).expect("lo < hi");
        (0..n).map(|_| d.sample(&mut self.rng)).collect()
    }

    pub fn param(&mut self, name: &str, t: Tensor) {
        let prev = self.params.insert(name.to_owned(), t);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    /// Kaiming-normal convolution weight `[co, ci, k]`, optional zero bias.
    pub fn conv(&mut self, name: &str, co: usize, ci: usize, k: usize, bias: bool) {
        let w = self.normal(co * ci * k, (2.0 / (ci * k) as f64).sqrt());
        self.param(&format!("{name}.weight"), Tensor::new(vec![co, ci, k], w));
        if bias {
            self.param(&format!("{name}.bias"), Tensor::zeros(vec![co]));
        }
    }

    pub fn bn(&mut self, name: &str, c: usize, zero_gamma: bool) {
        let g = if zero_gamma { 0.0 } else { 1.0 };
        self.param(&format!("{name}.gamma"), Tensor::filled(vec![c], g));
        self.param(&format!("{name}.beta"), Tensor::zeros(vec![c]));
        self.buffers
            .insert(format!("{name}.running_mean"), Tensor::zeros(vec![c]));
        self.buffers
            .insert(format!("{name}.running_var"), Tensor::filled(vec![c], 1.0));
    }

    /// Linear weight `[o, i]` with N(0, 1/i) entries and zero bias.
    pub fn linear(&mut self, name: &str, o: usize, i: usize) {
        let w = self.normal(o * i, (1.0 / i as f64).sqrt());
        self.param(&format!("{name}.weight"), Tensor::new(vec![o, i], w));
        self.param(&format!("{name}.bias"), Tensor::zeros(vec![o]));
    }

    pub fn normal_param(&mut self, name: &str, shape: Vec<usize>, sd: f64) {
        let n = shape.iter().product();
        let v = self.normal(n, sd);
        self.param(name, Tensor::new(shape, v));
    }
}

/// Forward-pass helper binding a model's parameters to a tape.
pub(crate) struct Net<'a> {
    pub model: &'a Model,
    pub tape: &'a mut Tape,
}

impl Net<'_> {
    pub fn p(&mut self, name: &str) -> Var {
        let t = self
            .model
            .params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.tape.param(name, t)
    }

    fn has(&self, name: &str) -> bool {
        self.model.params.contains_key(name)
    }

    pub fn conv(&mut self, name: &str, x: Var, stride: usize, pad: usize) -> Var {
        let w = self.p(&format!("{name}.weight"));
        let bias_name = format!("{name}.bias");
        let b = self.has(&bias_name).then(|| self.p(&bias_name));
        self.tape.conv1d(x, w, b, stride, pad)
    }

    pub fn bn(&mut self, name: &str, x: Var) -> Var {
        let g = self.p(&format!("{name}.gamma"));
        let b = self.p(&format!("{name}.beta"));
        let rm = &self.model.buffers[&format!("{name}.running_mean")].data;
        let rv = &self.model.buffers[&format!("{name}.running_var")].data;
        self.tape.batch_norm(name, x, g, b, rm, rv)
    }

    pub fn linear(&mut self, name: &str, x: Var) -> Var {
        let w = self.p(&format!("{name}.weight"));
        let b = self.p(&format!("{name}.bias"));
        self.tape.linear(x, w, b)
    }
}

pub const INPUT_NORM: &str = "norm.input";
pub const OUTPUT_NORM: &str = "norm.output";

/// A built network: parameters, non-trainable buffers and its spec.
///
/// Buffers hold batch-norm running statistics plus two normalization
/// vectors: `norm.input = [shift, scale]` applied to raw waveforms, and
/// `norm.output = [sbp_shift, dbp_shift, sbp_scale, dbp_scale]` mapping the
/// network's standardized outputs back to mmHg.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

/// Result of one differentiated forward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    /// `[n, 2]` predictions in mmHg.
    pub predictions: Tensor,
    pub grads: BTreeMap<String, Vec<f64>>,
    pub bn_updates: Vec<BnUpdate>,
}

/// `scale * sum_i (w_sbp,i e_sbp,i^2 + w_dbp,i e_dbp,i^2)` over one batch.
#[derive(Debug, Clone, Copy)]
pub struct WeightedMse<'a> {
    pub targets: &'a [(f64, f64)],
    pub weights: &'a [(f64, f64)],
    pub scale: f64,
}

/// Builds and initializes a model. Pure in `spec`.
pub fn build_model(spec: &ModelSpec) -> Result<Model, ModelError> {
    spec.validate()?;
    let mut init = Init::new(spec.seed);
    match spec.architecture {
        Architecture::LeNet1d => arch::lenet::init(&mut init, spec),
        Architecture::XResNet1d50 => arch::xresnet::init(&mut init, spec, &arch::xresnet::LAYERS_50),
        Architecture::XResNet1d101 => arch::xresnet::init(&mut init, spec, &arch::xresnet::LAYERS_101),
        Architecture::Inception1d => arch::inception::init(&mut init, spec),
        Architecture::S4 => arch::s4::init(&mut init, spec),
    }
    init.buffers
        .insert(INPUT_NORM.into(), Tensor::new(vec![2], vec![0.0, 1.0]));
    init.buffers
        .insert(OUTPUT_NORM.into(), Tensor::new(vec![4], vec![0.0, 0.0, 1.0, 1.0]));
    Ok(Model {
        spec: spec.clone(),
        params: init.params,
        buffers: init.buffers,
    })
}

impl Model {
    pub fn minimum_input_length(&self) -> usize {
        self.spec.architecture.minimum_input_length()
    }

    pub fn n_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn set_input_normalization(&mut self, shift: f64, scale: f64) {
        self.buffers
            .insert(INPUT_NORM.into(), Tensor::new(vec![2], vec![shift, scale]));
    }

    pub fn set_output_normalization(&mut self, shift: (f64, f64), scale: (f64, f64)) {
        self.buffers.insert(
            OUTPUT_NORM.into(),
            Tensor::new(vec![4], vec![shift.0, shift.1, scale.0, scale.1]),
        );
    }

    fn check_input(&self, batch: &Tensor) -> Result<(), ModelError> {
        let c = self.spec.input_channels;
        if batch.shape.len() != 3 || batch.shape[1] != c || batch.shape[0] == 0 {
            return Err(ModelError::BadInputShape {
                channels: c,
                shape: batch.shape.clone(),
            });
        }
        let min = self.minimum_input_length();
        if batch.shape[2] < min {
            return Err(ModelError::InputTooShort {
                architecture: self.spec.architecture,
                length: batch.shape[2],
                minimum: min,
            });
        }
        if !batch.is_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        Ok(())
    }

    /// Records the full network on `tape`; returns `[n, 2]` mmHg predictions.
    fn record(&self, tape: &mut Tape, batch: &Tensor) -> Var {
        let norm = &self.buffers[INPUT_NORM].data;
        let (shift, scale) = (norm[0], norm[1]);
        let x = Tensor::new(
            batch.shape.clone(),
            batch.data.iter().map(|v| (v - shift) / scale).collect(),
        );
        let x = tape.constant(x);
        let mut net = Net { model: self, tape };
        let raw = match self.spec.architecture {
            Architecture::LeNet1d => arch::lenet::forward(&mut net, x),
            Architecture::XResNet1d50 => arch::xresnet::forward(&mut net, x, &arch::xresnet::LAYERS_50),
            Architecture::XResNet1d101 => arch::xresnet::forward(&mut net, x, &arch::xresnet::LAYERS_101),
            Architecture::Inception1d => arch::inception::forward(&mut net, x),
            Architecture::S4 => arch::s4::forward(&mut net, x),
        };
        let o = &self.buffers[OUTPUT_NORM].data;
        tape.affine_columns(raw, &[o[2], o[3]], &[o[0], o[1]])
    }

    /// Inference-mode predictions `[n, 2]` (SBP, DBP) in mmHg. Batch-norm
    /// layers use running statistics, so rows are independent and are
    /// evaluated in parallel chunks.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(batch)?;
        let n = batch.shape[0];
        let starts: Vec<usize> = (0..n).step_by(FORWARD_CHUNK).collect();
        let parts: Vec<Tensor> = starts
            .par_iter()
            .map(|&s| {
                let chunk = batch.slice_rows(s, (s + FORWARD_CHUNK).min(n));
                let mut tape = Tape::inference();
                let y = self.record(&mut tape, &chunk);
                tape.value(y).clone()
            })
            .collect();
        Ok(Tensor::concat_rows(&parts))
    }

    /// Loss, predictions and parameter gradients for one batch.
    pub fn gradients(&self, batch: &Tensor, loss: &WeightedMse<'_>, mode: Mode) -> Result<Gradients, ModelError> {
        self.check_input(batch)?;
        let n = batch.shape[0];
        for got in [loss.targets.len(), loss.weights.len()] {
            if got != n {
                return Err(ModelError::TargetMismatch { batch: n, got });
            }
        }
        let mut tape = Tape::new(mode);
        let pred = self.record(&mut tape, batch);
        let pv = &tape.value(pred).data;
        if let Some(i) = (0..n).find(|i| {
            let (es, ed) = (pv[2 * i] - loss.targets[*i].0, pv[2 * i + 1] - loss.targets[*i].1);
            !(loss.weights[*i].0 * es * es + loss.weights[*i].1 * ed * ed).is_finite()
        }) {
            return Err(ModelError::NonFiniteLoss { sample: i });
        }
        let l = tape.weighted_sq_error(pred, loss.targets, loss.weights, loss.scale);
        let value = tape.value(l).data[0];
        if !value.is_finite() {
            return Err(ModelError::NonFiniteLoss { sample: 0 });
        }
        let grads = tape.backward(l);
        let predictions = tape.value(pred).clone();
        Ok(Gradients {
            loss: value,
            predictions,
            grads,
            bn_updates: tape.take_bn_updates(),
        })
    }

    /// Folds batch statistics into the running statistics.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate], momentum: f64) {
        for u in updates {
            let rm = self
                .buffers
                .get_mut(&format!("{}.running_mean", u.prefix))
                .expect("batch-norm buffer");
            rm.data
                .iter_mut()
                .zip(&u.mean)
                .for_each(|(r, m)| *r = (1.0 - momentum) * *r + momentum * m);
            let rv = self
                .buffers
                .get_mut(&format!("{}.running_var", u.prefix))
                .expect("batch-norm buffer");
            rv.data
                .iter_mut()
                .zip(&u.var)
                .for_each(|(r, v)| *r = (1.0 - momentum) * *r + momentum * v);
        }
    }
}
