use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the run directory when it lies inside it.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Audit record of one invocation. Timestamps and timings live only here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub timings: Vec<StageTiming>,
    pub started_unix: u64,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), CliError> {
    let bytes = fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Output directory of one invocation. Every file written through it (or
/// registered with [`RunDir::record`]) ends up checksummed in the manifest.
pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
    written: Vec<PathBuf>,
    read: Vec<PathBuf>,
    clock: Instant,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, args: Vec<String>, config: serde_json::Value) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|source| CliError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Ok(Self {
            root: root.to_path_buf(),
            manifest: RunManifest {
                tool: "uax".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                args,
                config,
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings: Vec::new(),
                started_unix,
            },
            written: Vec::new(),
            read: Vec::new(),
            clock: Instant::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn record(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.written.extend(paths);
    }

    pub fn record_input(&mut self, path: &Path) {
        self.read.push(path.to_path_buf());
    }

    /// Records the time since the previous stage ended.
    pub fn stage(&mut self, name: &str) {
        self.manifest.timings.push(StageTiming {
            stage: name.into(),
            seconds: self.clock.elapsed().as_secs_f64(),
        });
        self.clock = Instant::now();
    }

    fn records(&self, paths: &[PathBuf]) -> Result<Vec<FileRecord>, CliError> {
        let mut files: Vec<&PathBuf> = paths.iter().collect();
        files.sort();
        files.dedup();
        files
            .into_iter()
            .map(|p| {
                let (sha256, bytes) = sha256_file(p)?;
                let shown = p.strip_prefix(&self.root).unwrap_or(p);
                Ok(FileRecord {
                    path: shown.to_string_lossy().replace('\\', "/"),
                    sha256,
                    bytes,
                })
            })
            .collect()
    }

    /// Checksums everything and writes `manifest.json`.
    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.outputs = self.records(&self.written)?;
        self.manifest.inputs = self.records(&self.read)?;
        let path = self.path(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|source| CliError::Io { path, source })?;
        Ok(self.manifest)
    }
}
