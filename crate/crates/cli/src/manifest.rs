//! One JSON manifest per run: what ran, with which settings, on which
//! inputs, producing which outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Settings;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(Artifact {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub settings: Settings,
    pub seed: u64,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
}

/// Collects a manifest while a command runs.
pub struct Recorder {
    manifest: RunManifest,
    started: Instant,
}

impl Recorder {
    pub fn start(command: &str, settings: &Settings) -> Self {
        Recorder {
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                settings: settings.clone(),
                seed: settings.train.seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                wall_clock_secs: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = seed;
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.manifest.inputs.push(Artifact::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<()> {
        self.manifest.outputs.push(Artifact::of(path)?);
        Ok(())
    }

    /// Writes the manifest to `path`, or next to the first output, or to
    /// `unids-<command>.manifest.json`.
    pub fn finish(mut self, path: Option<&Path>) -> anyhow::Result<PathBuf> {
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        let target = match (path, self.manifest.outputs.first()) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(a)) => {
                let mut s = a.path.clone().into_os_string();
                s.push(".manifest.json");
                PathBuf::from(s)
            }
            (None, None) => PathBuf::from(format!("unids-{}.manifest.json", self.manifest.command.replace(' ', "-"))),
        };
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&target, text).with_context(|| format!("writing {}", target.display()))?;
        Ok(target)
    }
}
