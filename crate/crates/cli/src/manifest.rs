//! Per-run record of stage inputs and outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Input name to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn file_hash(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Times a stage and records its hashes once it has finished.
pub struct StageTimer {
    name: String,
    inputs: BTreeMap<String, String>,
    start: Instant,
}

impl StageTimer {
    /// Hashes `inputs` up front so that a stage overwriting one of them still
    /// records what it read.
    pub fn start(name: &str, inputs: &[(String, &Path)]) -> CliResult<Self> {
        let inputs = inputs
            .iter()
            .map(|(k, p)| Ok((k.clone(), file_hash(p)?)))
            .collect::<CliResult<_>>()?;
        Ok(StageTimer {
            name: name.to_string(),
            inputs,
            start: Instant::now(),
        })
    }

    pub fn finish(self, out: &Path, outputs: &[&str], config_hash: &str, seed: u64) -> CliResult<()> {
        let path = out.join(FILE_NAME);
        let mut manifest: RunManifest = if path.exists() {
            resilience_core::io::read_json(&path)?
        } else {
            RunManifest::default()
        };
        manifest.tool = "resili".into();
        manifest.version = env!("CARGO_PKG_VERSION").into();
        if manifest.config_hash != config_hash {
            manifest.stages.clear();
        }
        manifest.config_hash = config_hash.to_string();
        manifest.seed = seed;
        let outputs = outputs
            .iter()
            .map(|name| Ok((name.to_string(), file_hash(&out.join(name))?)))
            .collect::<CliResult<_>>()?;
        manifest.stages.insert(
            self.name,
            StageRecord {
                inputs: self.inputs,
                outputs,
                wall_seconds: self.start.elapsed().as_secs_f64(),
            },
        );
        resilience_core::io::write_json(&path, &manifest)?;
        Ok(())
    }
}
