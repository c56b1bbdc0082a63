//! Layered run configuration: built-in defaults, then a JSON config file,
//! then command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use lpt_core::model::ModelConfig;
use lpt_core::sampler::LangevinConfig;
use lpt_core::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SEED_ENV: &str = "LPT_SEED";

/// Contents of a `--config` file. Every section is optional and may be
/// partial; missing fields keep their defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: Option<Value>,
    #[serde(default)]
    pub trainer: Option<Value>,
    #[serde(default)]
    pub sampler: Option<Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))
            }
        }
    }
}

/// Error that maps to the usage/validation exit code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Recursively overwrites `base` with the entries of `patch`.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Like [`merge`], but records keys that `base` does not have. An object whose
/// `kind` tag changes replaces the old one outright.
fn overlay(base: &mut Value, patch: &Value, path: &str, unknown: &mut Vec<String>) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            if p.get("kind").is_some_and(|k| b.get("kind") != Some(k)) {
                *b = p.clone();
                return;
            }
            for (k, v) in p {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(k) {
                    Some(slot) => overlay(slot, v, &here, unknown),
                    None => unknown.push(here),
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn layered<T: Serialize + serde::de::DeserializeOwned>(default: T, file: Option<&Value>, flags: Value, what: &str) -> Result<T> {
    let mut v = serde_json::to_value(default)?;
    let mut unknown = Vec::new();
    if let Some(f) = file {
        overlay(&mut v, f, "", &mut unknown);
    }
    overlay(&mut v, &flags, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(usage(format!("{what} config: unknown field(s) {}", unknown.join(", "))));
    }
    serde_json::from_value(v).map_err(|e| usage(format!("{what} config: {e}")))
}

pub fn model_config(default: ModelConfig, file: &ConfigFile, flags: Value) -> Result<ModelConfig> {
    let cfg: ModelConfig = layered(default, file.model.as_ref(), flags, "model")?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn trainer_config(default: TrainerConfig, file: &ConfigFile, flags: Value) -> Result<TrainerConfig> {
    let cfg: TrainerConfig = layered(default, file.trainer.as_ref(), flags, "trainer")?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn sampler_config(default: LangevinConfig, file: &ConfigFile, flags: Value) -> Result<LangevinConfig> {
    let cfg: LangevinConfig = layered(default, file.sampler.as_ref(), flags, "sampler")?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

/// Where the seed came from, for the provenance banner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedSource {
    Flag,
    File,
    Env,
    Default,
}

pub fn resolve_seed(flag: Option<u64>, file: &ConfigFile, fallback: Option<u64>) -> Result<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    if let Some(s) = file.seed {
        return Ok((s, SeedSource::File));
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        let s = v.trim().parse().map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        return Ok((s, SeedSource::Env));
    }
    fallback
        .map(|s| (s, SeedSource::Default))
        .ok_or_else(|| usage(format!("a seed is required: pass --seed, set it in the config file, or set {SEED_ENV}")))
}

/// Adds `key: value` to a JSON object when the flag was given.
pub fn set<T: Serialize>(obj: &mut Value, key: &str, value: Option<T>) {
    if let Some(v) = value {
        obj[key] = serde_json::to_value(v).expect("flag values serialise");
    }
}
