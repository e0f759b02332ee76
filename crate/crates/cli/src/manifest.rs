//! Run manifests and atomic file output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    args: Vec<String>,
    config: &'a serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
    version: &'static str,
    wall_time: f64,
}

/// Collects what a command read and wrote; written once the command is done.
pub struct Recorder {
    command: &'static str,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    config: serde_json::Value,
}

impl Recorder {
    pub fn new(command: &'static str) -> Self {
        Recorder {
            command,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            config: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let mut inputs = Vec::new();
        for p in &self.inputs {
            let bytes = fs::read(p).with_context(|| format!("hashing {}", p.display()))?;
            inputs.push(InputHash {
                path: p.display().to_string(),
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
        let manifest = RunManifest {
            command: self.command,
            args: std::env::args().skip(1).collect(),
            config: &self.config,
            seed: self.seed,
            inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            version: env!("CARGO_PKG_VERSION"),
            wall_time: self.started.elapsed().as_secs_f64(),
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        write_atomic(path, &json)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// `<path>.manifest.json`
pub fn beside(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}
