//! Run manifest: tool version, command, seed, resolved configuration and
//! digests of every file read or written.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::config::sha256_hex;
use crate::error::{AppError, Result};
use crate::io;

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: toml::Table,
    /// File name → sha256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| AppError::Io { path: path.to_path_buf(), source })?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn new(command: &str, seed: u64, resolved_config: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_sha256: sha256_hex(resolved_config.as_bytes()),
            config: resolved_config.parse().unwrap_or_default(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(file_name(path), digest(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(file_name(path), digest(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| AppError::Config(e.to_string()))?;
        io::write_text(path, &text)
    }
}
