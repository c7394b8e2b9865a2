//! Run manifests: every artifact-producing command records what it ran,
//! with what configuration, and the checksum of everything it wrote.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use daca_core::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub corpus_paths: Vec<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<ArtifactRef>,
    pub duration_ms: u64,
    pub timestamp_unix_ms: u64,
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    corpus_paths: Vec<String>,
    seed: Option<u64>,
    outputs: Vec<ArtifactRef>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::Value::Null,
            corpus_paths: Vec::new(),
            seed: None,
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn corpus_path(&mut self, path: &Path) {
        self.corpus_paths.push(path.display().to_string());
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Registers a written artifact and records its checksum.
    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        self.outputs.push(ArtifactRef {
            path: path.display().to_string(),
            sha256: format!("{digest:x}"),
        });
        Ok(())
    }

    /// Writes the manifest next to the other artifacts.
    pub fn write(self, path: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            corpus_paths: self.corpus_paths,
            seed: self.seed,
            outputs: self.outputs,
            duration_ms: self.started.elapsed().as_millis() as u64,
            timestamp_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// Output paths derived from one `--out` prefix.
pub struct OutPaths {
    prefix: PathBuf,
}

impl OutPaths {
    pub fn new(prefix: &Path) -> Result<Self> {
        if let Some(parent) = prefix.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        Ok(Self {
            prefix: prefix.to_path_buf(),
        })
    }

    pub fn with_suffix(&self, suffix: &str) -> PathBuf {
        let mut name = self
            .prefix
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        name.push('.');
        name.push_str(suffix);
        self.prefix.with_file_name(name)
    }

    pub fn manifest(&self) -> PathBuf {
        self.with_suffix("manifest.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_paths_attach_suffixes() {
        let out = OutPaths::new(Path::new("/tmp/daca-test-run/exp1")).unwrap();
        assert_eq!(
            out.with_suffix("corpus.jsonl"),
            PathBuf::from("/tmp/daca-test-run/exp1.corpus.jsonl")
        );
        assert_eq!(
            out.manifest(),
            PathBuf::from("/tmp/daca-test-run/exp1.manifest.json")
        );
        std::fs::remove_dir_all("/tmp/daca-test-run").ok();
    }

    #[test]
    fn manifest_records_checksums() {
        let dir = std::env::temp_dir().join(format!("daca-manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let artifact = dir.join("artifact.txt");
        std::fs::write(&artifact, "hello").unwrap();
        let mut b = ManifestBuilder::new("demo");
        b.artifact(&artifact).unwrap();
        let manifest_path = dir.join("m.json");
        b.write(&manifest_path).unwrap();
        let loaded: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
        assert_eq!(loaded.command, "demo");
        assert_eq!(loaded.outputs.len(), 1);
        // sha256 of "hello"
        assert_eq!(
            loaded.outputs[0].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        std::fs::remove_dir_all(&dir).ok();
    }
}
