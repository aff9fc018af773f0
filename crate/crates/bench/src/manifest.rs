use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    /// SHA-256 of the canonical JSON form of the effective config.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub started_at_unix: u64,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: &impl Serialize) -> Self {
        let versions = [
            ("ppgbench-core", ppgbench_core::VERSION),
            ("ppgbench-models", ppgbench_models::VERSION),
            ("ppgbench-train", ppgbench_train::VERSION),
            ("ppgbench-bench", crate::VERSION),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            command,
            config_hash: config_hash(config),
            seeds: BTreeMap::new(),
            versions,
            timings: BTreeMap::new(),
            started_at_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Rebuilds every object with keys in sorted order.
pub fn canonicalize(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<&String, Value> = m.iter().map(|(k, v)| (k, canonicalize(v))).collect();
            let mut out = Map::new();
            for (k, v) in sorted {
                out.insert(k.clone(), v);
            }
            Value::Object(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

/// Hex SHA-256 of the compact canonical JSON encoding; independent of the
/// key order the config was written in.
pub fn config_hash(config: &impl Serialize) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    let text = serde_json::to_string(&canonicalize(&value)).expect("value serializes");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
