//! Per-run record of what was run, on which inputs, producing which files.

use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    /// Fully resolved configuration; absent only if resolution failed.
    pub config: Option<RunConfig>,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: String,
    pub status: String,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn digest_file(path: &Path) -> Result<InputDigest, CliError> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open input {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

/// State collected while a command runs.
#[derive(Debug)]
pub struct Run {
    pub command: String,
    pub args: Vec<String>,
    pub out: PathBuf,
    pub config: Option<RunConfig>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    started_at: String,
}

impl Run {
    pub fn new(command: &str, args: Vec<String>, out: PathBuf) -> Self {
        Self {
            command: command.to_string(),
            args,
            out,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: timestamp(),
        }
    }

    /// Records an input file's digest; a missing file is a usage error.
    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        if !self.inputs.iter().any(|d| d.path == path) {
            self.inputs.push(digest_file(path)?);
        }
        Ok(())
    }

    /// Path of an output file inside the run directory, recorded as written.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        if !self.outputs.contains(&p) {
            self.outputs.push(p.clone());
        }
        p
    }

    pub fn ensure_out_dir(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", self.out.display())))
    }

    pub fn finish(mut self, result: &Result<(), CliError>) -> Result<PathBuf, CliError> {
        let path = self.out.join(MANIFEST_FILE);
        self.outputs.push(path.clone());
        let (status, exit_code, error) = match result {
            Ok(()) => ("ok", 0, None),
            Err(e) => ("failed", e.exit_code(), Some(e.to_string())),
        };
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command,
            args: self.args,
            seed: self.config.as_ref().map(|c| c.seed),
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            started_at: self.started_at,
            finished_at: timestamp(),
            status: status.to_string(),
            exit_code,
            error,
        };
        std::fs::create_dir_all(&self.out)
            .and_then(|_| {
                let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
                std::fs::write(&path, text + "\n")
            })
            .map_err(|e| CliError::Runtime(format!("cannot write manifest {}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_value() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        std::fs::write(&p, "abc").unwrap();
        let d = digest_file(&p).unwrap();
        assert_eq!(d.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(d.bytes, 3);
        assert!(matches!(digest_file(&dir.path().join("missing")), Err(CliError::Config(_))));
    }

    #[test]
    fn failed_runs_still_write_a_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let run = Run::new("train", vec!["train".into()], out.clone());
        let path = run.finish(&Err(CliError::Runtime("boom".into()))).unwrap();
        let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(m.status, "failed");
        assert_eq!(m.exit_code, 1);
        assert_eq!(m.error.as_deref(), Some("error: boom"));
        assert_eq!(m.outputs, vec![out.join(MANIFEST_FILE)]);
    }
}
