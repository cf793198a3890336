use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A file produced by a run, with its content hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub stage: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub sha256: String,
}

/// What a run produced and from which config.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        RunManifest {
            config_hash: config_hash.to_string(),
            seed,
            artifacts: Vec::new(),
        }
    }

    /// Loads `dir/manifest.json` when it belongs to the same config and seed,
    /// otherwise starts afresh.
    pub fn open(dir: &Path, config_hash: &str, seed: u64) -> Result<Self> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::new(config_hash, seed));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        Ok(if m.config_hash == config_hash && m.seed == seed { m } else { Self::new(config_hash, seed) })
    }

    /// Records (or re-records) `dir/relative` under `stage`.
    pub fn record(&mut self, dir: &Path, stage: &str, relative: impl Into<PathBuf>) -> Result<()> {
        let path = relative.into();
        let sha256 = file_sha256(&dir.join(&path))?;
        self.artifacts.retain(|a| a.path != path);
        self.artifacts.push(Artifact {
            stage: stage.to_string(),
            path,
            sha256,
        });
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Every listed file exists and still has the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let found = file_sha256(&dir.join(&a.path))?;
            if found != a.sha256 {
                return Err(Error::StaleCheckpoint {
                    expected: a.sha256.clone(),
                    found,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "x").unwrap();
        let mut m = RunManifest::new("abc", 1);
        m.record(dir.path(), "prepare", "a.txt").unwrap();
        m.record(dir.path(), "prepare", "a.txt").unwrap();
        assert_eq!(m.artifacts.len(), 1);
        m.write(dir.path()).unwrap();
        let back = RunManifest::open(dir.path(), "abc", 1).unwrap();
        assert_eq!(back, m);
        back.verify(dir.path()).unwrap();
        assert!(RunManifest::open(dir.path(), "other", 1).unwrap().artifacts.is_empty());
        fs::write(dir.path().join("a.txt"), "y").unwrap();
        assert!(back.verify(dir.path()).is_err());
    }
}
