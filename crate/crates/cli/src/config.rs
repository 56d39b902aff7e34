//! Run configuration: defaults, an optional JSON file, then `--set key=value`
//! overrides with dotted keys.

use std::path::Path;

use mtnet_core::data::FoldOptions;
use mtnet_core::evaluation::EvalOptions;
use mtnet_core::networks::ModelConfig;
use mtnet_core::trainer::TrainConfig;
use mtnet_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SNAPSHOT_FILE: &str = "run_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Share of scans held out for validation by `train`, drawn by subject.
    pub val_fraction: f64,
    pub folds: FoldOptions,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            val_fraction: 0.1,
            folds: FoldOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalOptions,
}

impl RunConfig {
    /// Merges `file` and `overrides` over `base`. Every key supplied by the
    /// user must survive the round trip, so misspelt keys are rejected.
    pub fn resolve(base: RunConfig, file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut merged = serde_json::to_value(&base)?;
        let mut supplied = Value::Object(Map::new());
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let user: Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if !user.is_object() {
                return Err(Error::Config(format!("{}: top level must be an object", path.display())));
            }
            merge(&mut merged, &user);
            merge(&mut supplied, &user);
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut merged, key, value.clone())?;
            set_path(&mut supplied, key, value)?;
        }
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        let round_trip = serde_json::to_value(&cfg)?;
        let mut unknown = Vec::new();
        unknown_keys(&supplied, &round_trip, String::new(), &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown configuration keys: {}", unknown.join(", "))));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(SNAPSHOT_FILE), self)
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn merge(dst: &mut Value, src: &Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        d.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (dst, src) => *dst = src.clone(),
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?} descends into a non-object")))?;
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override key {key:?} descends into a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn unknown_keys(supplied: &Value, resolved: &Value, prefix: String, out: &mut Vec<String>) {
    let Value::Object(s) = supplied else { return };
    for (k, v) in s {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match resolved.get(k) {
            None => out.push(path),
            Some(r) => unknown_keys(v, r, path, out),
        }
    }
}
