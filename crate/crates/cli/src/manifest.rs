//! Per-run provenance record written next to every artifact set.

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use petc_core::{PetcError, Result};
use serde::Serialize;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Seeds {
    pub channel: u64,
    pub estimation: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_path: String,
    pub config_digest: String,
    pub seeds: Seeds,
    /// Sweep cell parameters, absent for single runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell: Option<serde_json::Value>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, config_path: &Path, config_digest: &str, seeds: Seeds) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_path: config_path.display().to_string(),
            config_digest: config_digest.to_string(),
            seeds,
            cell: None,
            outputs: Vec::new(),
            started_at: now(),
            finished_at: String::new(),
        }
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish_and_write(mut self, path: &Path) -> Result<PathBuf> {
        self.finished_at = now();
        let json = serde_json::to_string_pretty(&self)
            .map_err(|e| PetcError::Config(format!("cannot serialize manifest: {e}")))?;
        crate::commands::write_file(path, format!("{json}\n").as_bytes())?;
        Ok(path.to_path_buf())
    }
}
