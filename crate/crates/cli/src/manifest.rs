use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written at the root of its run
/// directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// sha256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every output, keyed by path relative to the run directory.
    pub outputs: BTreeMap<String, String>,
    pub timings_s: BTreeMap<String, f64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects inputs, timings and outputs while a command runs. Outputs are
/// buffered and only written by [`Run::finish`], so a failing command leaves
/// nothing behind.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    pending: Vec<(String, Vec<u8>)>,
    started: Instant,
    phase: Instant,
}

impl Run {
    pub fn new(command: &str, dir: &Path, config: serde_json::Value, seed: Option<u64>) -> Self {
        let now = Instant::now();
        Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                config,
                seed,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                timings_s: BTreeMap::new(),
            },
            pending: Vec::new(),
            started: now,
            phase: now,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Closes the current timing phase under `name`.
    pub fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.manifest
            .timings_s
            .insert(name.to_string(), (now - self.phase).as_secs_f64());
        self.phase = now;
    }

    pub fn output(&mut self, name: &str, bytes: Vec<u8>) {
        self.pending.push((name.to_string(), bytes));
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        for (name, bytes) in &self.pending {
            let path = self.dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            self.manifest
                .outputs
                .insert(name.clone(), hex::encode(Sha256::digest(bytes)));
        }
        self.manifest
            .timings_s
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
