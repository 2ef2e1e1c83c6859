//! Artifact writing, run manifests and replay comparison.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use oscmap_core::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::plot::Figure;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// File-name-safe form of a channel id.
pub fn stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') { c } else { '_' })
        .collect()
}

/// Output directory that records the hash of everything written into it.
pub struct Outputs {
    dir: PathBuf,
    artifacts: Vec<FileHash>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let bytes = bytes.as_ref();
        fs::write(self.dir.join(name), bytes)?;
        let hash = FileHash { path: name.to_string(), sha256: sha256_hex(bytes) };
        match self.artifacts.iter_mut().find(|a| a.path == name) {
            Some(a) => *a = hash,
            None => self.artifacts.push(hash),
        }
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    /// `<stem>.svg` plus `<stem>.plot.csv` holding the plotted numbers.
    pub fn figure(&mut self, stem: &str, fig: Figure) -> Result<()> {
        self.write(&format!("{stem}.svg"), fig.svg)?;
        self.write(&format!("{stem}.plot.csv"), fig.csv)
    }

    pub fn artifacts(&self) -> &[FileHash] {
        &self.artifacts
    }
}

/// Everything needed to re-run a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Working directory that relative input paths refer to.
    pub cwd: PathBuf,
    pub workers: usize,
    pub tz_offset_hours: f64,
    pub seed: Option<u64>,
    /// Parsed arguments with every default filled in.
    pub params: serde_json::Value,
    /// Values the command derived (chosen channels, estimator settings, ...).
    pub resolved: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub artifacts: Vec<FileHash>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Artifacts whose hash differs or that are missing from `actual`.
pub fn diff_artifacts(expected: &[FileHash], actual: &[FileHash]) -> Vec<String> {
    let got: BTreeMap<&str, &str> = actual.iter().map(|a| (a.path.as_str(), a.sha256.as_str())).collect();
    let mut out: Vec<String> = expected
        .iter()
        .filter_map(|e| match got.get(e.path.as_str()) {
            None => Some(format!("{} (missing)", e.path)),
            Some(h) if *h != e.sha256 => Some(format!("{} (differs)", e.path)),
            _ => None,
        })
        .collect();
    let want: BTreeMap<&str, ()> = expected.iter().map(|a| (a.path.as_str(), ())).collect();
    out.extend(actual.iter().filter(|a| !want.contains_key(a.path.as_str())).map(|a| format!("{} (unexpected)", a.path)));
    out
}
