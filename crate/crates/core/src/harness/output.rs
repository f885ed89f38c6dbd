use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{sha256_hex, HarnessConfig};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Run record written next to the outputs. Carries no wall-clock data so
/// equal runs produce equal manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
    pub outputs: Vec<OutputEntry>,
}

/// Collects named outputs, then writes them and the manifest into `dir`,
/// which must already exist.
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Result<Self> {
        let meta = std::fs::metadata(dir).map_err(|e| Error::io(dir, e))?;
        if !meta.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotADirectory, "output path is not a directory"),
            ));
        }
        Ok(OutputSet {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn finish(self, command: &str, seed: u64, cfg: &HarnessConfig, checkpoint: Option<&[u8]>) -> Result<Manifest> {
        let mut outputs = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            outputs.push(OutputEntry {
                file: name.clone(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len(),
            });
        }
        let manifest = Manifest {
            command: command.to_string(),
            seed,
            config_hash: cfg.hash(),
            config: serde_json::from_str(&cfg.canonical_json()).expect("canonical json parses"),
            checkpoint_sha256: checkpoint.map(sha256_hex),
            outputs,
        };
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_dir_is_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        let err = OutputSet::new(&tmp.path().join("absent")).err().unwrap();
        assert!(err.is_io(), "{err:?}");
    }

    #[test]
    fn manifest_records_hashes_and_seed() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = HarnessConfig::default();
        let mut out = OutputSet::new(tmp.path()).unwrap();
        out.add("a.csv", "x,y\n1,2\n");
        let m = out.finish("frontier", 9, &cfg, Some(b"ckpt")).unwrap();
        assert_eq!(m.seed, 9);
        assert_eq!(m.config_hash, cfg.hash());
        assert_eq!(m.outputs[0].sha256, sha256_hex(b"x,y\n1,2\n"));
        assert_eq!(std::fs::read_to_string(tmp.path().join("a.csv")).unwrap(), "x,y\n1,2\n");
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(v["command"], "frontier");
        assert_eq!(v["config"]["tcr"]["n_targets"], 500);
    }
}
