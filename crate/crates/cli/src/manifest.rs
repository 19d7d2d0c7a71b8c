use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const RUN_MANIFEST: &str = "run.json";

/// Written next to every command's outputs. `options` holds the merged
/// flag/config values under their flag names, which is all `c2c rerun`
/// needs to repeat the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub options: serde_json::Value,
    /// Fully resolved configuration, defaults included.
    pub resolved: serde_json::Value,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub duration_seconds: f64,
}

pub struct RunRecorder {
    started: Instant,
    pub manifest: RunManifest,
}

impl RunRecorder {
    pub fn start(command: &str, options: &impl Serialize) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: None,
                options: serde_json::to_value(options).expect("options serialize"),
                resolved: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                duration_seconds: 0.0,
            },
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.manifest.inputs.insert(name.to_string(), path.to_path_buf());
    }

    pub fn output(&mut self, path: PathBuf) {
        self.manifest.outputs.push(path);
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.manifest.duration_seconds = self.started.elapsed().as_secs_f64();
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn load_run_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing run manifest {}", path.display()))
}
