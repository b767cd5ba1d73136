//! Run manifest: configuration, provenance and a digest of every output file.

use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Bumped whenever a CSV schema or binary layout changes.
pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegridRecord {
    pub step: u64,
    pub t: f64,
    pub old_h: f64,
    pub new_h: f64,
    pub new_origin: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub code_version: String,
    /// Canonical config text.
    pub config: String,
    /// Unix seconds; zero in reproducible mode.
    pub start_time: f64,
    pub end_time: f64,
    pub regrids: Vec<RegridRecord>,
    pub warnings: Vec<String>,
    /// `"ok"` or the cause of the failure.
    pub status: String,
    pub outputs: Vec<OutputFile>,
}

pub fn now(reproducible: bool) -> f64 {
    if reproducible {
        return 0.0;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, config: String, reproducible: bool) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            start_time: now(reproducible),
            end_time: 0.0,
            regrids: Vec::new(),
            warnings: Vec::new(),
            status: "running".into(),
            outputs: Vec::new(),
        }
    }

    pub fn read(dir: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// Write to a temporary sibling and rename over the final name.
    pub fn write_atomic(&self, dir: &Path) -> io::Result<()> {
        let tmp = dir.join(format!(".{MANIFEST_NAME}.tmp"));
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(&tmp, text + "\n")?;
        std::fs::rename(&tmp, dir.join(MANIFEST_NAME))
    }
}
