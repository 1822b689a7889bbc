//! Run manifests: everything needed to replay a run and check it bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nla_core::shrinkage::Regime;

use crate::config::{ExperimentConfig, Format};
use crate::{CliResult, Command};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: rayon::current_num_threads(),
        }
    }
}

/// Where one output row came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub setting: usize,
    pub n: u32,
    pub sigma: f64,
    pub trial: usize,
    pub seed: u64,
    pub runtime_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub command: Command,
    pub config: Option<ExperimentConfig>,
    pub seed: u64,
    pub format: Format,
    pub regime: Option<Regime>,
    pub non_primary: bool,
    pub environment: Environment,
    pub rows: Vec<Provenance>,
    /// File name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
    /// SHA-256 over the deterministic content of the outputs (timings excluded).
    pub digest: String,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| crate::CliError::Config(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Incremental digest over a sequence of byte chunks, each length-prefixed.
#[derive(Default)]
pub struct Digester(Sha256);

impl Digester {
    pub fn update(&mut self, chunk: &[u8]) {
        self.0.update((chunk.len() as u64).to_le_bytes());
        self.0.update(chunk);
    }

    pub fn finish(self) -> String {
        self.0.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
