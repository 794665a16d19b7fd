use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

/// SHA-256 of a file's bytes, hex-encoded.
pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Runtime(format!("hashing {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub losses: BTreeMap<String, f64>,
}

/// Everything needed to re-run a command: the resolved config, the inputs it
/// consumed (with hashes), the artifacts it produced (with hashes), timing,
/// and the per-epoch loss table for training commands.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub consumed: Vec<ArtifactRecord>,
    pub artifacts: Vec<ArtifactRecord>,
    pub loss_table: Vec<EpochLosses>,
}

impl RunManifest {
    pub fn begin(command: &str, config: &RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            config: config.clone(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            consumed: Vec::new(),
            artifacts: Vec::new(),
            loss_table: Vec::new(),
        }
    }

    pub fn consume(&mut self, path: &Path) -> Result<(), CliError> {
        self.consumed.push(ArtifactRecord {
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    /// Record an artifact by its path relative to the output directory.
    pub fn artifact(&mut self, out_dir: &Path, rel: &str) -> Result<(), CliError> {
        self.artifacts.push(ArtifactRecord {
            path: rel.to_string(),
            sha256: file_sha256(&out_dir.join(rel))?,
        });
        Ok(())
    }

    pub fn record_epoch(&mut self, epoch: usize, losses: BTreeMap<String, f64>) {
        self.loss_table.push(EpochLosses { epoch, losses });
    }

    /// Finish and write `manifest.json` in the output directory.
    pub fn finish(mut self, out_dir: &Path) -> Result<(), CliError> {
        self.finished_unix_ms = now_ms();
        let text = serde_json::to_string_pretty(&self)
            .map_err(|e| CliError::Runtime(format!("manifest: {e}")))?;
        std::fs::write(out_dir.join("manifest.json"), text)
            .map_err(|e| CliError::Runtime(format!("manifest: {e}")))?;
        Ok(())
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_artifacts_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"hello").unwrap();
        let config = RunConfig::default();
        let mut m = RunManifest::begin("test", &config);
        m.artifact(dir.path(), "a.txt").unwrap();
        m.finish(dir.path()).unwrap();

        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["command"], "test");
        assert_eq!(v["artifacts"][0]["path"], "a.txt");
        // sha256 of "hello"
        assert_eq!(
            v["artifacts"][0]["sha256"],
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }
}
