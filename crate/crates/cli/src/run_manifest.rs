use std::path::{Path, PathBuf};

use serde::Serialize;
use stereokd::{Error, Result};

pub const RUN_MANIFEST_FILE: &str = "run.json";

/// Record of one command invocation, written next to its outputs.
#[derive(Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: String,
    pub command: &'a str,
    /// The seed every random choice of the run derives from.
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub artifacts: Vec<PathBuf>,
}

impl<'a> RunManifest<'a> {
    pub fn new(command: &'a str, seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            tool: "stereokd",
            version: format!("v{}", env!("CARGO_PKG_VERSION")),
            command,
            seed,
            config,
            artifacts: Vec::new(),
        }
    }

    /// Writes the manifest into `dir` and returns the full artifact list,
    /// manifest included.
    pub fn finish(mut self, dir: &Path) -> Result<Vec<PathBuf>> {
        let path = dir.join(RUN_MANIFEST_FILE);
        self.artifacts.push(path.clone());
        let text = serde_json::to_string_pretty(&self).map_err(|e| Error::format(&path, e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(self.artifacts)
    }
}
