use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use mzimesh::derive_seed;
use mzimesh::mesh::sha256_hex;
use serde::Serialize;

/// Stage labels fed to [`derive_seed`].
pub mod stage {
    pub const CHIP: u64 = 1;
    pub const RANDOM_VOLTAGES: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const MODEL3_INIT: u64 = 4;
    pub const XOR_TRAIN: u64 = 5;
    pub const XOR_NOISE: u64 = 6;
}

pub fn stage_seed(global: u64, stage: u64) -> u64 {
    derive_seed(global, stage)
}

/// Provenance record written next to every command's outputs. Only
/// deterministic content goes in, so reruns reproduce it byte for byte.
#[derive(Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub stage_seeds: BTreeMap<&'static str, u64>,
    /// Config name → SHA-256 of its JSON encoding.
    pub config_hashes: BTreeMap<String, String>,
    pub config: serde_json::Value,
    /// Input file name → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64) -> Self {
        Self {
            tool: "mzimesh",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            stage_seeds: BTreeMap::new(),
            config_hashes: BTreeMap::new(),
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &'static str, stage: u64) -> u64 {
        let s = stage_seed(self.seed, stage);
        self.stage_seeds.insert(name, s);
        s
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        // File names only: the same inputs in another directory hash the same.
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.inputs.insert(name, sha256_hex(&bytes));
        Ok(())
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.outputs.sort();
        let mut s = serde_json::to_string_pretty(&self)?;
        s.push('\n');
        std::fs::write(dir.join("manifest.json"), s)?;
        Ok(())
    }
}
