use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_n_groups() -> usize {
    1
}

fn default_conv_kernel() -> usize {
    4
}

fn default_norm_eps() -> f64 {
    1e-5
}

/// Architecture hyperparameters. `d_inner` defaults to `expand · d_model`
/// and must equal `n_heads · head_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MambaConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub d_state: usize,
    #[serde(default = "default_n_groups")]
    pub n_groups: usize,
    #[serde(default = "default_conv_kernel")]
    pub conv_kernel: usize,
    pub vocab_size: usize,
    pub expand: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_inner: Option<usize>,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

fn cfg_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl MambaConfig {
    /// Small configuration used by tests and fixtures.
    pub fn toy() -> Self {
        MambaConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            head_dim: 16,
            d_state: 16,
            n_groups: 1,
            conv_kernel: 4,
            vocab_size: 256,
            expand: 1,
            d_inner: None,
            norm_eps: 1e-5,
        }
    }

    /// Public Mamba2-2.7B hyperparameters.
    pub fn mamba2_2_7b() -> Self {
        MambaConfig {
            d_model: 2560,
            n_layers: 64,
            n_heads: 80,
            head_dim: 64,
            d_state: 128,
            n_groups: 1,
            conv_kernel: 4,
            vocab_size: 50280,
            expand: 2,
            d_inner: None,
            norm_eps: 1e-5,
        }
    }

    pub fn d_inner(&self) -> usize {
        self.d_inner.unwrap_or(self.expand * self.d_model)
    }

    /// Width of the concatenated `(X, B, C)` conv channels.
    pub fn conv_channels(&self) -> usize {
        self.d_inner() + 2 * self.n_groups * self.d_state
    }

    /// Output width of the input projection: `Z, X, B, C, Δ`.
    pub fn in_proj_dim(&self) -> usize {
        2 * self.d_inner() + 2 * self.n_groups * self.d_state + self.n_heads
    }

    pub fn heads_per_group(&self) -> usize {
        self.n_heads / self.n_groups
    }

    pub fn state_len(&self) -> usize {
        self.n_heads * self.head_dim * self.d_state
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("d_state", self.d_state),
            ("n_groups", self.n_groups),
            ("conv_kernel", self.conv_kernel),
            ("vocab_size", self.vocab_size),
            ("expand", self.expand),
        ] {
            if v == 0 {
                return Err(cfg_err(field, "must be positive"));
            }
        }
        let inner = self.d_inner();
        if inner != self.n_heads * self.head_dim {
            return Err(cfg_err(
                "d_inner",
                format!(
                    "{inner} != n_heads * head_dim = {}",
                    self.n_heads * self.head_dim
                ),
            ));
        }
        if !self.n_heads.is_multiple_of(self.n_groups) {
            return Err(cfg_err("n_groups", "must divide n_heads"));
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return Err(cfg_err("norm_eps", "must be positive and finite"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: MambaConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg.split('`').nth(1).unwrap_or("<document>").to_string();
            Error::Config { field, reason: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<MambaConfig> {
    MambaConfig::from_json(&std::fs::read_to_string(path)?)
}

pub fn save_config(cfg: &MambaConfig, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, cfg.to_json())?;
    Ok(())
}
