//! Layered run configuration: built-in defaults, then the JSON config file,
//! then command-line flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use hsie_core::hsidata::DegradeConfig;
use hsie_core::model::HsieConfig;
use hsie_core::training::TrainConfig;

use crate::exit::CliError;

/// Raw sections of a config file; each is merged field by field onto the
/// defaults so partial sections are allowed.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub model: Option<Value>,
    #[serde(default)]
    pub train: Option<Value>,
    #[serde(default)]
    pub degrade: Option<Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))
    }

    pub fn model(&self, base: HsieConfig) -> Result<HsieConfig, CliError> {
        overlay(&base, self.model.as_ref(), "model")
    }

    pub fn train(&self, base: TrainConfig) -> Result<TrainConfig, CliError> {
        overlay(&base, self.train.as_ref(), "train")
    }

    pub fn degrade(&self, base: DegradeConfig) -> Result<DegradeConfig, CliError> {
        overlay(&base, self.degrade.as_ref(), "degrade")
    }
}

/// Recursively replaces fields of `base` with those present in `patch`.
/// Non-object values replace wholesale.
fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Unknown keys survive the merge and are then rejected by the target's
/// `deny_unknown_fields`.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&Value>, section: &str) -> Result<T, CliError> {
    let Some(patch) = patch else {
        return serde_json::to_value(base)
            .and_then(serde_json::from_value)
            .map_err(|e| CliError::validation(format!("{section}: {e}")));
    };
    if !patch.is_object() {
        return Err(CliError::validation(format!("config section `{section}` must be an object")));
    }
    let mut value = serde_json::to_value(base).map_err(|e| CliError::validation(e.to_string()))?;
    merge(&mut value, patch);
    serde_json::from_value(value).map_err(|e| CliError::validation(format!("config section `{section}`: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_base_fields() {
        let file: ConfigFile = serde_json::from_str(r#"{"model": {"feat": 12}, "train": {"adam": {"beta1": 0.8}}}"#).unwrap();
        let m = file.model(HsieConfig::desk()).unwrap();
        assert_eq!(m.feat, 12);
        assert_eq!(m.k, HsieConfig::desk().k);
        let t = file.train(TrainConfig::default()).unwrap();
        assert_eq!(t.adam.beta1, 0.8);
        assert_eq!(t.adam.beta2, 0.999);
        assert_eq!(file.degrade(DegradeConfig::default()).unwrap(), DegradeConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let file: ConfigFile = serde_json::from_str(r#"{"train": {"learning_rate": 1.0}}"#).unwrap();
        let err = file.train(TrainConfig::default()).unwrap_err();
        assert!(err.message.contains("learning_rate"), "{}", err.message);
        let err = serde_json::from_str::<ConfigFile>(r#"{"optimizer": {}}"#).unwrap_err();
        assert!(err.to_string().contains("optimizer"));
    }

    #[test]
    fn wrong_types_are_rejected() {
        let file: ConfigFile = serde_json::from_str(r#"{"model": {"k": "eight"}}"#).unwrap();
        assert!(file.model(HsieConfig::desk()).is_err());
        let file: ConfigFile = serde_json::from_str(r#"{"model": 3}"#).unwrap();
        assert!(file.model(HsieConfig::desk()).is_err());
    }
}
