use std::path::Path;

use anyhow::{anyhow, Context, Result};
use dissc::envs::{EnvConfig, EnvKind, MatrixGameSpec};
use dissc::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::exit::Failure;

/// Training and environment settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub env: EnvConfig,
}

impl RunConfig {
    pub fn canonical_json(&self) -> String {
        // serde_json objects keep keys sorted, so field order never leaks in
        let v = serde_json::to_value(self).expect("configs serialize");
        serde_json::to_string(&v).expect("values serialize")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Parses a TOML or JSON file (chosen by extension) into a JSON value.
pub fn read_document(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let v: Value = if is_json {
        serde_json::from_str(&text)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
    };
    Ok(v)
}

fn preset(kind: EnvKind) -> EnvConfig {
    match kind {
        EnvKind::PredatorPrey => EnvConfig::predator_prey(),
        EnvKind::Ctf => EnvConfig::ctf(),
        EnvKind::MatrixGame => EnvConfig::matrix_game(MatrixGameSpec::one_shot(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ])),
    }
}

/// Recursively writes the fields of `over` into `base`.
fn overlay(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Full config document: defaults, overlaid by the file, as JSON.
pub fn resolve_document(file: Option<&Value>) -> Result<Value> {
    let empty = Value::Object(Map::new());
    let file = file.unwrap_or(&empty);
    let obj = file
        .as_object()
        .ok_or_else(|| Failure::config("config file must be a table with `train` and `env` sections"))?;
    if let Some(k) = obj.keys().find(|k| *k != "train" && *k != "env") {
        return Err(Failure::config(format!(
            "unknown top-level key `{k}`; expected `train` and `env`"
        ))
        .into());
    }
    let mut train = serde_json::to_value(TrainConfig::default())?;
    if let Some(t) = obj.get("train") {
        overlay(&mut train, t);
    }
    let kind = match obj.get("env").and_then(|e| e.get("env_kind")) {
        Some(k) => serde_json::from_value(k.clone())
            .map_err(|e| Failure::config(format!("env.env_kind: {e}")))?,
        None => EnvKind::PredatorPrey,
    };
    let mut env = serde_json::to_value(preset(kind))?;
    if let Some(e) = obj.get("env") {
        overlay(&mut env, e);
    }
    let mut doc = Map::new();
    doc.insert("train".into(), train);
    doc.insert("env".into(), env);
    Ok(Value::Object(doc))
}

/// Dotted paths of every leaf of `v`.
pub fn leaf_keys(v: &Value) -> Vec<String> {
    fn walk(v: &Value, prefix: &str, out: &mut Vec<String>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, x) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(x, &p, out);
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }
    let mut out = Vec::new();
    walk(v, "", &mut out);
    out
}

/// Full dotted path for an override key. Bare keys resolve to the first
/// section holding them, `train` before `env`.
fn resolve_key(doc: &Value, key: &str) -> Result<String> {
    let keys = leaf_keys(doc);
    if keys.iter().any(|k| k == key) {
        return Ok(key.to_string());
    }
    for section in ["train", "env"] {
        let full = format!("{section}.{key}");
        if keys.iter().any(|k| *k == full) {
            return Ok(full);
        }
    }
    Err(Failure::config(format!(
        "unknown override key `{key}`; valid keys: {}",
        keys.join(", ")
    ))
    .into())
}

fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `key=value` overrides. Values are read as JSON where possible and
/// as plain strings otherwise.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("override `{item}` is not key=value")))?;
        let path = resolve_key(doc, key.trim())?;
        let mut slot = &mut *doc;
        for part in path.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| anyhow!("override path `{path}` vanished"))?;
        }
        *slot = parse_scalar(raw.trim());
    }
    Ok(())
}

/// Loads, overrides and validates a run config.
pub fn load_run_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let file = match path {
        Some(p) => Some(read_document(p)?),
        None => None,
    };
    let mut doc = resolve_document(file.as_ref())?;
    apply_overrides(&mut doc, overrides)?;
    if let Some(s) = seed {
        doc["train"]["seed"] = Value::from(s);
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Failure::config(e.to_string()))?;
    cfg.train
        .validate()
        .and_then(|_| cfg.env.validate())
        .map_err(|e| Failure::config(e.to_string()))
        .context("invalid configuration")?;
    Ok(cfg)
}
