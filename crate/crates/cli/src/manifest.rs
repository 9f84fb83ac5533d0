//! Run manifests: what a command was asked to do, on which bytes, and what
//! it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    /// File path, or `preset:<name>` for built-in configurations.
    pub source: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every option after defaults are applied.
    pub options: serde_json::Value,
    pub inputs: BTreeMap<String, InputRecord>,
    pub tool_version: String,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(command: &str, options: &impl Serialize) -> Self {
        RunManifest {
            command: command.to_string(),
            options: serde_json::to_value(options).expect("options serialize"),
            inputs: BTreeMap::new(),
            tool_version: TOOL_VERSION.to_string(),
            outputs: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn input_file(&mut self, role: &str, path: &Path) -> Result<()> {
        let sha256 = hash_file(path)?;
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                source: path.display().to_string(),
                sha256,
            },
        );
        Ok(())
    }

    /// Records a built-in configuration by the hash of its JSON form.
    pub fn input_preset(&mut self, role: &str, name: &str, json: &str) {
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                source: format!("preset:{name}"),
                sha256: sha256_hex(json.as_bytes()),
            },
        );
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}
