//! Run manifests: tool version, config hash, input and output digests,
//! seed, thread count and timestamps for every CLI command.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: u64,
    pub threads: usize,
    pub parallel: bool,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, config_sha256: String, seed: u64, threads: usize, parallel: bool) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed,
            threads,
            parallel,
            started_at: now_rfc3339(),
            finished_at: String::new(),
        }
    }

    /// Records the digest of every existing file in `paths` under its file
    /// name.
    pub fn add_files(map: &mut BTreeMap<String, String>, paths: &[&Path]) -> std::io::Result<()> {
        for p in paths {
            if p.is_file() {
                let name = p
                    .file_name()
                    .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
                map.insert(name, sha256_file(p)?);
            }
        }
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> std::io::Result<()> {
        self.finished_at = now_rfc3339();
        let path = dir.join(format!("manifest.{}.json", self.command));
        std::fs::write(
            path,
            serde_json::to_string_pretty(&self).map_err(std::io::Error::from)? + "\n",
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_records_files() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        std::fs::write(&f, b"abc").unwrap();
        let mut m = RunManifest::start("test", sha256_hex(b"{}"), 7, 1, false);
        RunManifest::add_files(&mut m.inputs, &[&f, &dir.path().join("missing")]).unwrap();
        assert_eq!(m.inputs.len(), 1);
        assert_eq!(
            m.inputs["a.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        m.finish(dir.path()).unwrap();
        let back: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.test.json")).unwrap()).unwrap();
        assert_eq!(back.seed, 7);
        assert!(!back.finished_at.is_empty());
    }
}
