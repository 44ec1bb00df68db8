use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl InputDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(CliError::io(path))?;
        Ok(InputDigest {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }
}

/// Everything that varies between runs without changing the numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Runtime {
    pub jobs: usize,
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    /// Fully resolved command, seed included; replay re-runs exactly this.
    pub command: Command,
    pub inputs: Vec<InputDigest>,
    /// Per-module notes raised during the run (fallbacks, dropped columns, ...).
    pub flags: BTreeMap<String, serde_json::Value>,
    pub runtime: Runtime,
}
