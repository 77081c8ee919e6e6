use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST: &str = "manifest.json";

/// SHA-256 of `"blob {len}\0" ++ bytes`, the object id git would give the
/// file under SHA-256.
pub fn git_checksum(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn file_checksum(path: &Path) -> CliResult<String> {
    Ok(git_checksum(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: String,
    /// `ok`, `validation_error`, `runtime_error` or `acceptance_failed`.
    pub status: String,
    pub config_checksum: String,
    /// Effective seed after command-line overrides.
    pub seed: u64,
    pub wallclock_secs: f64,
    /// Run-relative path to checksum, for every file the command wrote.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Log of every command run against a directory. Entries are only appended.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub entries: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn append(dir: &Path, entry: ManifestEntry) -> CliResult<()> {
        let mut m = Self::load(dir)?;
        m.entries.push(entry);
        write_atomic(&dir.join(MANIFEST), serde_json::to_string_pretty(&m)?.as_bytes())
    }

    pub fn last(&self, command: &str) -> Option<&ManifestEntry> {
        self.entries.iter().rev().find(|e| e.command == command)
    }
}

/// Files written by a command, recorded relative to the run directory.
#[derive(Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub written: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            written: BTreeMap::new(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Writes `bytes` to `rel` and records its checksum.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)?;
        self.written.insert(rel.to_string(), git_checksum(bytes));
        Ok(path)
    }

    /// Records a file some other routine already wrote.
    pub fn record(&mut self, rel: &str) -> CliResult<()> {
        let sum = file_checksum(&self.path(rel))?;
        self.written.insert(rel.to_string(), sum);
        Ok(())
    }
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn git_checksum_matches_known_object_ids() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            git_checksum(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
        assert_eq!(
            git_checksum(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn manifest_is_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let entry = |c: &str| ManifestEntry {
            command: c.into(),
            status: "ok".into(),
            config_checksum: "x".into(),
            seed: 0,
            wallclock_secs: 0.0,
            artifacts: BTreeMap::new(),
            message: None,
        };
        RunManifest::append(dir.path(), entry("pretrain")).unwrap();
        RunManifest::append(dir.path(), entry("eval")).unwrap();
        let m = RunManifest::load(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].command, "pretrain");
        assert_eq!(m.last("eval").unwrap().command, "eval");
    }
}
