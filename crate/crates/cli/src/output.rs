//! Output directories: every artifact a command writes is recorded, hashed
//! into `manifest.json` on success, and deleted again on failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mafn_core::MafnError;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FileDigest {
    pub role: String,
    /// As given on the command line for inputs; a bare file name for artifacts.
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce the contents of an output directory.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Option<serde_json::Value>,
    /// Non-file options that change the outputs.
    pub options: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "mafn".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: None,
            config: None,
            options: BTreeMap::new(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn config<T: Serialize>(&mut self, cfg: &T) {
        self.config = Some(serde_json::to_value(cfg).expect("config serializes"));
    }

    pub fn option(&mut self, key: &str, value: impl ToString) {
        self.options.insert(key.into(), value.to_string());
    }

    pub fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileDigest {
            role: role.into(),
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_input(path: &Path) -> Result<Vec<u8>, MafnError> {
    std::fs::read(path).map_err(|e| MafnError::io(path, e))
}

/// An output directory being filled by one command.
#[derive(Debug)]
pub struct OutDir {
    dir: PathBuf,
    created_dir: bool,
    /// role → file name, in write order
    artifacts: Vec<(String, String)>,
    /// files this run created or overwrote
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, MafnError> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir).map_err(|e| MafnError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            artifacts: Vec::new(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, role: &str, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), MafnError> {
        let path = self.path(name);
        self.written.push(path.clone());
        std::fs::write(&path, bytes).map_err(|e| MafnError::io(&path, e))?;
        self.artifacts.push((role.into(), name.into()));
        Ok(())
    }

    /// Lists a file that already sits in the directory, e.g. a reused cache.
    pub fn adopt(&mut self, role: &str, name: &str, newly_written: bool) {
        if newly_written {
            self.written.push(self.path(name));
        }
        self.artifacts.push((role.into(), name.into()));
    }

    /// Hashes the artifacts and writes the manifest.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<PathBuf, MafnError> {
        let mut digests = Vec::with_capacity(self.artifacts.len());
        for (role, name) in &self.artifacts {
            let bytes = read_input(&self.path(name))?;
            digests.push(FileDigest {
                role: role.clone(),
                path: name.clone(),
                sha256: sha256_hex(&bytes),
            });
        }
        manifest.artifacts = digests;
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = self.path(MANIFEST_NAME);
        self.written.push(path.clone());
        std::fs::write(&path, text).map_err(|e| MafnError::io(&path, e))?;
        self.written.clear();
        Ok(path)
    }

    /// Removes what this run wrote, and the directory if it made it.
    pub fn abort(self) {
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}
