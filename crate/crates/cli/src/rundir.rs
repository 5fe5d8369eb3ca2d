//! Run directories: an exclusive lock while a command writes into one, and
//! the manifest describing how its contents were produced.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SourceRecord;
use crate::error::{io_err, CliError, CliResult};

pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Holds `<dir>/.lock` until dropped.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn acquire(path: &Path) -> CliResult<RunDir> {
        fs::create_dir_all(path).map_err(|e| io_err(path, e))?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunDir {
                    path: path.to_path_buf(),
                })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let owner = fs::read_to_string(&lock).unwrap_or_default();
                Err(CliError::usage(format!(
                    "run directory {} is in use (lock held by process {}); \
                     use a different --out or delete {} if that process is gone",
                    path.display(),
                    owner.trim(),
                    lock.display()
                )))
            }
            Err(e) => Err(io_err(&lock, e)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: impl AsRef<Path>) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let p = self.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&p, contents).map_err(|e| io_err(&p, e))?;
        Ok(p)
    }

    pub fn create(&self, name: &str) -> CliResult<File> {
        let p = self.join(name);
        File::create(&p).map_err(|e| io_err(&p, e))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub timestamp: String,
    pub version: String,
    /// Fully resolved settings, defaults included.
    pub config: Value,
    pub seed: Option<u64>,
    #[serde(default)]
    pub sources: Vec<SourceRecord>,
    pub dataset_hash: Option<String>,
    pub vocab_hash: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub init_from: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: Value) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seed: None,
            sources: Vec::new(),
            dataset_hash: None,
            vocab_hash: None,
            checkpoint: None,
            init_from: None,
        }
    }

    pub fn read(path: &Path) -> CliResult<RunManifest> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &RunDir) -> CliResult<PathBuf> {
        dir.write(MANIFEST_FILE, serde_json::to_string_pretty(self).expect("manifest serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_lock_is_refused_until_release() {
        let tmp = tempfile::tempdir().unwrap();
        let first = RunDir::acquire(tmp.path()).unwrap();
        let err = RunDir::acquire(tmp.path()).unwrap_err();
        assert_eq!(err.code(), 1);
        assert!(err.message.contains("in use"));
        drop(first);
        assert!(RunDir::acquire(tmp.path()).is_ok());
    }
}
