//! `manifest.json`: which inputs, parameters and outputs each stage saw.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::util::{sha256_hex, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    /// Digest of the stage name, its parameters and its input digests.
    pub fingerprint: String,
    pub params: serde_json::Value,
    /// Input path (relative to the output directory for stage outputs) to
    /// sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub tool_version: String,
    /// The configuration of the most recent run, as TOML.
    pub config: String,
    pub stages: BTreeMap<String, StageEntry>,
}

impl PipelineManifest {
    pub fn new(config: String) -> Self {
        PipelineManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            stages: BTreeMap::new(),
        }
    }

    /// Reads the manifest in `dir`, or an empty one if none exists.
    pub fn load(dir: &Path) -> io::Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    /// Every output file traces to this stage entry.
    pub fn producer_of(&self, output: &str) -> Option<&str> {
        self.stages
            .iter()
            .find(|(_, e)| e.outputs.contains_key(output))
            .map(|(name, _)| name.as_str())
    }
}

pub fn fingerprint(stage: &str, params: &serde_json::Value, inputs: &BTreeMap<String, String>) -> String {
    let doc = serde_json::json!({ "stage": stage, "params": params, "inputs": inputs });
    sha256_hex(doc.to_string().as_bytes())
}
