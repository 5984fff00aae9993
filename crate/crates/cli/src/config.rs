//! JSON config files: every section is optional and overlays the preset
//! defaults key by key, so a file only lists what it changes.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<Value>,
    pub train: Option<Value>,
    pub data: Option<Value>,
    pub ablation: Option<AblationSection>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    pub axis: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub train_fraction: Option<f64>,
    pub split_seed: Option<u64>,
}

/// Raised for anything the user can fix by changing flags or config; maps to
/// exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(pub String);

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// `defaults` with `overlay` applied; unknown keys are rejected by the
/// target type and reported under `section`.
pub fn overlay<T: Serialize + DeserializeOwned>(section: &str, defaults: &T, overlay: Option<&Value>) -> Result<T> {
    let Some(o) = overlay else { return Ok(serde_json::from_value(serde_json::to_value(defaults)?)?) };
    let mut v = serde_json::to_value(defaults).context("serializing defaults")?;
    merge(&mut v, o);
    serde_json::from_value(v).map_err(|e| invalid(format!("{section}: {e}")))
}
