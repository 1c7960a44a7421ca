//! Run directories: `<out>/<command>-<unix seconds>-<hash12>`, where the hash
//! covers the fully resolved configuration. A second run with the same hash
//! is refused so earlier outputs are never overwritten.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.json";

pub fn config_hash<T: Serialize>(resolved: &T) -> String {
    let json = serde_json::to_vec(resolved).expect("config serializes");
    hex::encode(Sha256::digest(json))[..12].to_string()
}

fn existing_run(out: &Path, command: &str, hash: &str) -> Option<PathBuf> {
    let prefix = format!("{command}-");
    let suffix = format!("-{hash}");
    fs::read_dir(out).ok()?.filter_map(|e| e.ok()).map(|e| e.path()).find(|p| {
        p.is_dir()
            && p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix) && n.ends_with(&suffix))
    })
}

#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub hash: String,
}

impl RunDir {
    /// Creates the directory and writes the resolved config into it.
    pub fn create<T: Serialize>(out: &Path, command: &str, resolved: &T) -> CliResult<RunDir> {
        let hash = config_hash(resolved);
        if let Some(prev) = existing_run(out, command, &hash) {
            return Err(CliError::RunExists(prev));
        }
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let path = out.join(format!("{command}-{stamp}-{hash}"));
        fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        let run = RunDir { path, hash };
        run.write_json(CONFIG_FILE, resolved)?;
        Ok(run)
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let path = self.join(name);
        let text = serde_json::to_string_pretty(value).expect("output serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let path = self.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Removes a run that failed so the same configuration can be retried.
    pub fn discard(self) {
        if let Err(e) = fs::remove_dir_all(&self.path) {
            tracing::warn!(path = %self.path.display(), error = %e, "could not remove failed run");
        }
    }
}
