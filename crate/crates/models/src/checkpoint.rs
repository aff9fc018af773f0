//! Checkpoint directories.
//!
//! ```text
//! spec.json            model spec
//! index.json           name -> {shape, offset, file, kind}
//! tensors/<name>.f32   raw little-endian f32 values, one file per tensor
//! ```
//!
//! Values are stored as 32-bit floats, so a reloaded model equals the saved
//! one up to f32 rounding.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{build_model, Model, ModelError, ModelSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub shape: Vec<usize>,
    /// Byte offset of the first value inside `file`.
    pub offset: u64,
    pub file: String,
    pub kind: TensorKind,
}

fn err(e: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(e.to_string())
}

pub fn save_checkpoint(model: &Model, dir: impl AsRef<Path>) -> Result<(), ModelError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("tensors")).map_err(err)?;
    let mut spec = serde_json::to_string_pretty(&model.spec).map_err(err)?;
    spec.push('\n');
    fs::write(dir.join("spec.json"), spec).map_err(err)?;

    let mut index = BTreeMap::new();
    let all = model
        .params
        .iter()
        .map(|(k, v)| (k, v, TensorKind::Param))
        .chain(model.buffers.iter().map(|(k, v)| (k, v, TensorKind::Buffer)));
    for (name, t, kind) in all {
        let file = format!("tensors/{name}.f32");
        let bytes: Vec<u8> = t.data.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes).map_err(err)?;
        index.insert(
            name.clone(),
            IndexEntry {
                shape: t.shape.clone(),
                offset: 0,
                file,
                kind,
            },
        );
    }
    let mut idx = serde_json::to_string_pretty(&index).map_err(err)?;
    idx.push('\n');
    fs::write(dir.join("index.json"), idx).map_err(err)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Model, ModelError> {
    let dir = dir.as_ref();
    let spec: ModelSpec =
        serde_json::from_str(&fs::read_to_string(dir.join("spec.json")).map_err(err)?).map_err(err)?;
    let index: BTreeMap<String, IndexEntry> =
        serde_json::from_str(&fs::read_to_string(dir.join("index.json")).map_err(err)?).map_err(err)?;
    let mut model = build_model(&spec)?;
    for (name, e) in &index {
        let target = match e.kind {
            TensorKind::Param => model.params.get_mut(name),
            TensorKind::Buffer => model.buffers.get_mut(name),
        }
        .ok_or_else(|| err(format!("{name} is not part of a {} model", spec.architecture)))?;
        if target.shape != e.shape {
            return Err(err(format!(
                "{name}: shape {:?} does not match {:?}",
                e.shape, target.shape
            )));
        }
        let bytes = fs::read(dir.join(&e.file)).map_err(err)?;
        let start = e.offset as usize;
        let need = target.len() * 4;
        if bytes.len() < start + need {
            return Err(err(format!(
                "{name}: blob holds {} bytes, need {}",
                bytes.len(),
                start + need
            )));
        }
        target.data = bytes[start..start + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
    }
    let missing: Vec<&String> = model.params.keys().filter(|k| !index.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(err(format!("missing tensors {missing:?}")));
    }
    Ok(model)
}

/// Rounds every parameter and buffer to f32 precision, matching what a
/// save/load cycle yields.
pub fn round_to_f32(model: &Model) -> Model {
    let r = |m: &BTreeMap<String, Tensor>| {
        m.iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    Tensor::new(t.shape.clone(), t.data.iter().map(|v| *v as f32 as f64).collect()),
                )
            })
            .collect()
    };
    Model {
        spec: model.spec.clone(),
        params: r(&model.params),
        buffers: r(&model.buffers),
    }
}
