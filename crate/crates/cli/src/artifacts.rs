//! Output directory handling and the hash manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// File name to lowercase hex SHA-256.
    pub files: BTreeMap<String, String>,
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| io(&p, e))?;
        Ok(p)
    }

    /// Rewrites the manifest over every regular file in the directory.
    pub fn seal(&self) -> Result<Manifest, CliError> {
        let mut files = BTreeMap::new();
        for entry in fs::read_dir(&self.root).map_err(|e| io(&self.root, e))? {
            let entry = entry.map_err(|e| io(&self.root, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name == MANIFEST || !entry.path().is_file() {
                continue;
            }
            let bytes = fs::read(entry.path()).map_err(|e| io(&entry.path(), e))?;
            files.insert(name, sha256_hex(&bytes));
        }
        let manifest = Manifest { files };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        self.write(MANIFEST, text + "\n")?;
        Ok(manifest)
    }
}

/// Names of files whose contents no longer match `dir`'s manifest.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>, CliError> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    let mut bad = Vec::new();
    for (name, hash) in &manifest.files {
        match fs::read(dir.join(name)) {
            Ok(bytes) if sha256_hex(&bytes) == *hash => {}
            _ => bad.push(name.clone()),
        }
    }
    Ok(bad)
}
