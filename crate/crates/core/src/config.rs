//! Run configuration as flat `key = value` text.
//!
//! Values resolve in the order defaults, then file, then command-line
//! overrides. The serialised form lists every key, so an artifact carrying it
//! can be reproduced without knowing the defaults in force when it was made.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{RcfError, Result};
use crate::eval::CandidateMode;
use crate::model::{AttnOverride, RcfConfig};
use crate::trainer::TrainConfig;

/// Every recognised key, in serialisation order.
pub const KEYS: &[&str] = &[
    "corpus",
    "embedding_dim",
    "attention_factor",
    "mlp_hidden",
    "rho",
    "dropout",
    "mode",
    "attn_override",
    "lr",
    "batch_size",
    "gamma",
    "epochs",
    "eval_every",
    "patience",
    "seed",
    "deterministic",
    "eval_candidates",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
#[derive(Default)]
pub struct RunConfig {
    /// Prepared corpus bundle.
    pub corpus: Option<PathBuf>,
    pub model: RcfConfig,
    pub train: TrainConfig,
}


fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| RcfError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(RcfError::Config(format!("invalid value `{value}` for `{key}` (expected true or false)"))),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "corpus" => self.corpus = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "embedding_dim" => self.model.d = parse_value(key, value)?,
            "attention_factor" => self.model.f = parse_value(key, value)?,
            "mlp_hidden" => self.model.mlp_hidden = parse_value(key, value)?,
            "rho" => self.model.rho = parse_value(key, value)?,
            "dropout" => self.model.dropout = parse_value(key, value)?,
            "mode" => self.model.mode = value.to_string(),
            "attn_override" => self.model.attn_override = value.parse::<AttnOverride>()?,
            "lr" => self.train.lr = parse_value(key, value)?,
            "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "gamma" => self.train.gamma = parse_value(key, value)?,
            "epochs" => self.train.epochs = parse_value(key, value)?,
            "eval_every" => self.train.eval_every = parse_value(key, value)?,
            "patience" => self.train.patience = parse_value(key, value)?,
            "seed" => self.train.seed = parse_value(key, value)?,
            "deterministic" => self.train.deterministic = parse_bool(key, value)?,
            "eval_candidates" => {
                self.train.eval_candidates = match value {
                    "auto" => None,
                    other => Some(other.parse::<CandidateMode>()?),
                }
            }
            other => return Err(RcfError::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| RcfError::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            self.set(key.trim(), value).map_err(|e| RcfError::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Defaults, then the file (when given), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| RcfError::io(path, e))?;
            cfg.apply_text(&text, path)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "corpus" => self.corpus.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "embedding_dim" => self.model.d.to_string(),
            "attention_factor" => self.model.f.to_string(),
            "mlp_hidden" => self.model.mlp_hidden.to_string(),
            "rho" => self.model.rho.to_string(),
            "dropout" => self.model.dropout.to_string(),
            "mode" => self.model.mode.clone(),
            "attn_override" => self.model.attn_override.to_string(),
            "lr" => self.train.lr.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "gamma" => self.train.gamma.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "eval_every" => self.train.eval_every.to_string(),
            "patience" => self.train.patience.to_string(),
            "seed" => self.train.seed.to_string(),
            "deterministic" => self.train.deterministic.to_string(),
            "eval_candidates" => self.train.eval_candidates.map(|m| m.to_string()).unwrap_or_else(|| "auto".into()),
            _ => unreachable!("key list and accessor agree"),
        }
    }

    /// Fully resolved `key = value` text.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.value_of(k))).collect()
    }

    /// Fully resolved key/value object.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            KEYS.iter()
                .map(|k| (k.to_string(), serde_json::Value::String(self.value_of(k))))
                .collect(),
        )
    }

    /// Rebuilds a configuration from [`RunConfig::to_json`] output.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let map = value
            .as_object()
            .ok_or_else(|| RcfError::Config("embedded configuration is not an object".into()))?;
        let mut cfg = Self::default();
        for (k, v) in map {
            let text = v
                .as_str()
                .ok_or_else(|| RcfError::Config(format!("embedded value for `{k}` is not a string")))?;
            cfg.set(k, text)?;
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of the resolved text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
