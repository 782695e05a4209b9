//! Run configuration: one JSON document with model / train / data / io
//! sections. Unknown keys are rejected everywhere; `--set a.b.c=value`
//! overrides individual fields before deserialization.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use hsict_core::data::augment::AugmentConfig;
use hsict_core::model::ModelConfig;
use hsict_core::train::TrainConfig;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            per_class: 200,
            size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset root: one directory per class name.
    pub root: Option<PathBuf>,
    pub augment: AugmentConfig,
    /// Pad every class of the training split up to this count with
    /// augmented copies.
    pub balance_target: Option<usize>,
    pub toy: ToyConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            checkpoint_dir: PathBuf::from("runs"),
            report_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default_full(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            io: IoConfig::default(),
        }
    }
}

/// The defaults used by `--toy`: quarter-width model at 64², documented in
/// the README (200 samples per class).
pub fn toy_run_config() -> RunConfig {
    let mut cfg = RunConfig {
        model: ModelConfig::scaled(4, 64),
        ..Default::default()
    };
    cfg.train.epochs = 30;
    cfg
}

/// Apply one `path.to.field=value` override onto the JSON tree. Values
/// parse as JSON when possible (numbers, booleans, null) and fall back to
/// strings.
pub fn apply_override(tree: &mut serde_json::Value, spec: &str) -> Result<(), String> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override '{spec}' is not of the form path=value"))?;
    let value = serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let mut cursor = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if i + 1 == parts.len() {
            match cursor.as_object_mut() {
                Some(map) => {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                None => return Err(format!("override path '{path}' does not address an object")),
            }
        }
        cursor = cursor
            .as_object_mut()
            .and_then(|m| m.get_mut(*part))
            .ok_or_else(|| format!("unknown config section '{part}' in '{path}'"))?;
    }
    Err(format!("empty override path in '{spec}'"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        v["typo_section"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn override_sets_nested_field() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        apply_override(&mut v, "train.lr0=0.01").unwrap();
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.train.lr0, 0.01);
    }
}
