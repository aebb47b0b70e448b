//! Run manifests: everything needed to reproduce a run — the resolved
//! configuration snapshot, the seed, a corpus digest, the tool version,
//! timestamps, and the promised output files. The manifest is written
//! before training starts and finalized (with `finished_at`) afterwards.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    pub train_tokens: usize,
    pub held_out_tokens: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub corpus: CorpusDigest,
    /// The fully resolved configuration (file plus overrides).
    pub config: serde_json::Value,
    /// Files this run promises to produce, relative to the run directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::new("io", format!("cannot encode manifest: {e}")))?;
        fs::write(&path, json)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    /// Every promised output must exist once the run claims success.
    pub fn verify_outputs(&self, dir: &Path) -> CliResult<()> {
        for name in &self.outputs {
            let path = dir.join(name);
            if !path.exists() {
                return Err(CliError::io(format!(
                    "promised output {} was not produced",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

pub fn now_rfc3339() -> String {
    OffsetDateTime::now_utc()
        .format(&Rfc3339)
        .unwrap_or_else(|_| String::from("1970-01-01T00:00:00Z"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
