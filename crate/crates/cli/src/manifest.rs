//! Run manifest: the exact arguments, the resolved configuration and content
//! hashes of every input, so a run directory can be replayed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use iitnet::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub config_file: Option<PathBuf>,
    pub resolved_config: Option<String>,
    pub dataset_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    /// Path to sha256 (files) or to a hash over sorted `(relative path, file hash)` lines (directories).
    pub input_hashes: BTreeMap<String, String>,
    pub output_dir: PathBuf,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, output_dir: &Path) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            config_file: None,
            resolved_config: None,
            dataset_paths: Vec::new(),
            seed: None,
            input_hashes: BTreeMap::new(),
            output_dir: output_dir.to_path_buf(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.input_hashes.insert(path.display().to_string(), content_hash(path)?);
        Ok(())
    }

    /// Writes `manifest.json` and, when present, the resolved `config.toml`.
    pub fn write(&self) -> Result<()> {
        let dir = &self.output_dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(MANIFEST_FILE);
        fs::write(&p, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&p, e))?;
        if let Some(c) = &self.resolved_config {
            let p = dir.join(CONFIG_FILE);
            fs::write(&p, c).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

pub fn content_hash(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return file_hash(path);
    }
    let mut files = Vec::new();
    walk(path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(path).unwrap_or(&f);
        h.update(format!("{} {}\n", rel.display(), file_hash(&f)?));
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_tracks_content_not_mtime() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("a"), b"1").unwrap();
        fs::create_dir(d.path().join("sub")).unwrap();
        fs::write(d.path().join("sub/b"), b"2").unwrap();
        let h1 = content_hash(d.path()).unwrap();
        fs::write(d.path().join("a"), b"1").unwrap();
        assert_eq!(h1, content_hash(d.path()).unwrap());
        fs::write(d.path().join("sub/b"), b"3").unwrap();
        assert_ne!(h1, content_hash(d.path()).unwrap());
    }
}
