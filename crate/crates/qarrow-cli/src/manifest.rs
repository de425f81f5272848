//! Run manifests: written with status `running` before the experiment and
//! finalized with checksums and timestamps afterwards, so every output file
//! is tied to the exact configuration and seed that produced it.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub status: String,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    /// Resolved configuration snapshot (explicitly set keys).
    pub config: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    /// Output file name -> SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(experiment: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        Self {
            version: format!("qarrow {}", env!("CARGO_PKG_VERSION")),
            experiment: experiment.to_string(),
            seed,
            status: "running".to_string(),
            started_unix: now_unix(),
            finished_unix: None,
            config,
            warnings: Vec::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
    }

    /// Records checksums for the named files and marks the run complete.
    pub fn finalize(&mut self, dir: &Path, files: &[PathBuf]) -> io::Result<()> {
        for path in files {
            let bytes = fs::read(path)?;
            let digest = Sha256::digest(&bytes);
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            self.outputs.insert(name, hex);
        }
        self.status = "complete".to_string();
        self.finished_unix = Some(now_unix());
        self.write(dir)
    }
}

/// Collects experiment outputs under one directory and remembers their paths
/// for the manifest.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl OutputDir {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> io::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}
