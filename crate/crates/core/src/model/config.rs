use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::encoder::{encoder_registry, HistoryEncoder};
use crate::error::{RcfError, Result};
use crate::params::ModelDims;
use std::sync::Arc;

/// Replacement of attention distributions by uniform averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttnOverride {
    #[default]
    None,
    /// Uniform first-level weights `1/|T|`.
    Avg1,
    /// Uniform weights `1/n` inside each bucket.
    Avg2,
    AvgBoth,
}

impl AttnOverride {
    pub fn uniform_first_level(self) -> bool {
        matches!(self, AttnOverride::Avg1 | AttnOverride::AvgBoth)
    }

    pub fn uniform_second_level(self) -> bool {
        matches!(self, AttnOverride::Avg2 | AttnOverride::AvgBoth)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttnOverride::None => "none",
            AttnOverride::Avg1 => "avg1",
            AttnOverride::Avg2 => "avg2",
            AttnOverride::AvgBoth => "avg-both",
        }
    }
}

impl fmt::Display for AttnOverride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttnOverride {
    type Err = RcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttnOverride::None),
            "avg1" => Ok(AttnOverride::Avg1),
            "avg2" => Ok(AttnOverride::Avg2),
            "avg-both" | "avgBoth" | "avg_both" => Ok(AttnOverride::AvgBoth),
            other => Err(RcfError::Config(format!(
                "unknown attention override `{other}` (expected none, avg1, avg2, avg-both)"
            ))),
        }
    }
}

/// Model hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcfConfig {
    /// Embedding size.
    pub d: usize,
    /// Attention factor.
    pub f: usize,
    /// Smoothing exponent of the second-level softmax, in (0, 1].
    pub rho: f64,
    pub dropout: f64,
    pub mlp_hidden: usize,
    /// Name of the history encoder (`full`, `single`, `type-only`, `value-only`).
    pub mode: String,
    pub attn_override: AttnOverride,
}

impl Default for RcfConfig {
    fn default() -> Self {
        Self {
            d: 64,
            f: 32,
            rho: 0.5,
            dropout: 0.2,
            mlp_hidden: 64,
            mode: "full".into(),
            attn_override: AttnOverride::None,
        }
    }
}

/// Canonical encoder name for the accepted spellings.
pub fn canonical_mode(name: &str) -> &str {
    match name {
        "typeOnly" | "type_only" => "type-only",
        "valueOnly" | "value_only" => "value-only",
        other => other,
    }
}

impl RcfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(RcfError::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(0.0..=0.9).contains(&self.dropout) {
            return Err(RcfError::Config(format!("dropout must lie in [0, 0.9], got {}", self.dropout)));
        }
        if self.d == 0 || self.f == 0 || self.mlp_hidden == 0 {
            return Err(RcfError::Config("embedding size, attention factor and MLP width must be positive".into()));
        }
        let encoder = self.encoder()?;
        if self.attn_override.uniform_first_level() && !encoder.uses_first_level() {
            return Err(RcfError::Config(format!(
                "attention override `{}` replaces the first-level attention, which mode `{}` does not have",
                self.attn_override,
                encoder.name()
            )));
        }
        Ok(())
    }

    pub fn encoder(&self) -> Result<Arc<dyn HistoryEncoder>> {
        let registry = encoder_registry();
        registry.get(canonical_mode(&self.mode)).ok_or_else(|| {
            RcfError::Config(format!(
                "unknown mode `{}` (registered: {})",
                self.mode,
                registry.names().join(", ")
            ))
        })
    }

    pub fn dims(&self, n_users: usize, n_items: usize, n_types: usize, n_values: usize) -> ModelDims {
        ModelDims {
            n_users,
            n_items,
            n_types,
            n_values,
            d: self.d,
            f: self.f,
            hidden: self.mlp_hidden,
        }
    }
}
