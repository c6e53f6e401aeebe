//! The run manifest: config snapshot, artifact digests, and stage timings.
//!
//! Stages are digest-gated: an artifact is trusted only when its recorded
//! SHA-256 matches the bytes on disk, re-runs skip stages whose outputs
//! verify, and no stage consumes an artifact that fails verification.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::io::{read_json, sha256_file, write_json};
use super::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    /// Relative artifact path -> SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
    /// Stage name -> wall seconds of the run that produced it.
    pub timings: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(config: RunConfig) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn path(out_dir: &Path) -> PathBuf {
        out_dir.join(MANIFEST_FILE)
    }

    pub fn save(&self, out_dir: &Path) -> Result<(), PipelineError> {
        write_json(&Self::path(out_dir), self)
    }

    pub fn load(out_dir: &Path) -> Result<Manifest, PipelineError> {
        read_json(&Self::path(out_dir))
    }

    /// Loads the manifest if present, insisting the stored config matches.
    pub fn load_or_new(config: &RunConfig) -> Result<Manifest, PipelineError> {
        let path = Self::path(&config.out_dir);
        if path.exists() {
            let m = Manifest::load(&config.out_dir)?;
            if m.config != *config {
                return Err(PipelineError::ConfigMismatch(
                    config.out_dir.display().to_string(),
                ));
            }
            Ok(m)
        } else {
            Ok(Manifest::new(config.clone()))
        }
    }

    /// Digest status of one artifact: `Ok(true)` means present and matching.
    pub fn verify_artifact(&self, out_dir: &Path, rel: &str) -> Result<bool, PipelineError> {
        let path = out_dir.join(rel);
        match self.artifacts.get(rel) {
            None => Ok(false),
            Some(expected) => {
                if !path.exists() {
                    return Ok(false);
                }
                let actual = sha256_file(&path)?;
                if &actual == expected {
                    Ok(true)
                } else {
                    Err(PipelineError::DigestMismatch {
                        artifact: rel.to_string(),
                        expected: expected.clone(),
                        actual,
                    })
                }
            }
        }
    }

    pub fn record_artifact(&mut self, out_dir: &Path, rel: &str) -> Result<(), PipelineError> {
        let digest = sha256_file(&out_dir.join(rel))?;
        self.artifacts.insert(rel.to_string(), digest);
        Ok(())
    }

    /// Recomputes every recorded digest; any mismatch is an error.
    pub fn verify_all(&self, out_dir: &Path) -> Result<(), PipelineError> {
        for rel in self.artifacts.keys() {
            let path = out_dir.join(rel);
            if !path.exists() {
                return Err(PipelineError::CorruptArtifact(format!(
                    "{rel} listed in manifest but missing"
                )));
            }
            let actual = sha256_file(&path)?;
            let expected = &self.artifacts[rel];
            if &actual != expected {
                return Err(PipelineError::DigestMismatch {
                    artifact: rel.to_string(),
                    expected: expected.clone(),
                    actual,
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
    fn manifest_round_trip_and_verification() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.out_dir = dir.path().to_path_buf();
        let mut m = Manifest::new(cfg.clone());
        std::fs::write(dir.path().join("a.txt"), b"hello").unwrap();
        m.record_artifact(dir.path(), "a.txt").unwrap();
        m.save(dir.path()).unwrap();

        let loaded = Manifest::load_or_new(&cfg).unwrap();
        assert_eq!(loaded, m);
        assert!(loaded.verify_artifact(dir.path(), "a.txt").unwrap());
        assert!(!loaded.verify_artifact(dir.path(), "missing.txt").unwrap());
        loaded.verify_all(dir.path()).unwrap();

        // Tampering is detected, not silently accepted.
        std::fs::write(dir.path().join("a.txt"), b"tampered").unwrap();
        assert!(matches!(
            loaded.verify_artifact(dir.path(), "a.txt"),
            Err(PipelineError::DigestMismatch { .. })
        ));
        assert!(loaded.verify_all(dir.path()).is_err());

        // A config change refuses to reuse the output directory.
        let mut other = cfg.clone();
        other.seed = 99;
        assert!(matches!(
            Manifest::load_or_new(&other),
            Err(PipelineError::ConfigMismatch(_))
        ));
    }
}
