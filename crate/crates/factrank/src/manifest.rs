//! Run manifest written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::content_hash;
use crate::error::Result;
use crate::io::{read_file, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Option<serde_json::Value>,
    /// Input file path to SHA-256 of its bytes.
    pub datasets: BTreeMap<String, String>,
    /// Output file path to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    /// Content hash of the checkpoint written by the command, if any.
    pub checkpoint_hash: Option<String>,
    /// Stage name to wall-clock seconds.
    pub timings: BTreeMap<String, f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: None,
            config: None,
            datasets: BTreeMap::new(),
            outputs: BTreeMap::new(),
            checkpoint_hash: None,
            timings: BTreeMap::new(),
        }
    }

    pub fn with_config<T: Serialize>(&mut self, config: &T) {
        self.config = Some(serde_json::to_value(config).expect("config serializes"));
    }

    /// Hashes an input file that was already read.
    pub fn dataset(&mut self, path: &Path) -> Result<()> {
        let bytes = read_file(path)?;
        self.datasets.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn output(&mut self, path: &Path, bytes: &[u8]) {
        self.outputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    pub fn checkpoint(&mut self, path: &Path, bytes: &[u8]) {
        self.output(path, bytes);
        self.checkpoint_hash = Some(content_hash(bytes));
    }

    pub fn time(&mut self, stage: &str, since: Instant) {
        self.timings.insert(stage.into(), since.elapsed().as_secs_f64());
    }

    /// Writes `<dir>/<command>.manifest.json` atomically.
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
