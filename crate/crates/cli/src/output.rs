//! Single writer for one output directory, tracking digests for the manifest.

use std::path::{Path, PathBuf};

use crate::error::CliError;
use crate::manifest::{digest, now, OutputFile, RunManifest};

pub struct OutputDir {
    pub root: PathBuf,
    pub manifest: RunManifest,
    reproducible: bool,
}

impl OutputDir {
    pub fn create(
        root: &Path,
        manifest: RunManifest,
        reproducible: bool,
    ) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            reproducible,
        })
    }

    /// Write `bytes` to `rel` (replacing any earlier file of that name) and
    /// record its digest.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        let entry = OutputFile {
            path: rel.to_string(),
            sha256: digest(bytes),
            bytes: bytes.len() as u64,
        };
        match self.manifest.outputs.iter_mut().find(|o| o.path == rel) {
            Some(o) => *o = entry,
            None => self.manifest.outputs.push(entry),
        }
        Ok(())
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.manifest.warnings.push(msg);
    }

    /// Close the manifest with `status` and write it.
    pub fn finish(&mut self, status: &str) -> Result<(), CliError> {
        self.manifest.status = status.to_string();
        self.manifest.end_time = now(self.reproducible);
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.manifest
            .write_atomic(&self.root)
            .map_err(|e| CliError::io(&self.root, e))
    }
}
