//! Run manifests: a record written next to every artifact describing the
//! command, resolved configuration, input and output checksums, and the
//! chain of commands that produced the inputs.
//!
//! Manifests carry wall-clock timestamps, so unlike the artifacts they
//! describe they are not byte-reproducible.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub role: String,
    pub path: String,
    pub checksum: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
    /// Command lines of the upstream runs, oldest first.
    pub lineage: Vec<Vec<String>>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Manifest path for an artifact: `corpus.json` → `corpus.run.json`, a
/// directory → `dir/run.json`.
pub fn path_for(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        return artifact.join("run.json");
    }
    let stem = artifact.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    artifact.with_file_name(format!("{stem}.run.json"))
}

pub struct Recorder {
    manifest: RunManifest,
}

impl Recorder {
    pub fn start(config: &impl Serialize) -> anyhow::Result<Self> {
        Ok(Recorder {
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command: std::env::args().collect(),
                config: serde_json::to_value(config)?,
                inputs: Vec::new(),
                outputs: Vec::new(),
                lineage: Vec::new(),
                started_unix: now(),
                finished_unix: 0.0,
            },
        })
    }

    /// Records an input and adopts the lineage of the manifest that
    /// produced it, if there is one. The input must match the checksum that
    /// manifest recorded for it.
    pub fn input(&mut self, role: &str, path: &Path, checksum: &str) -> agra::Result<()> {
        self.manifest.inputs.push(ArtifactRef {
            role: role.into(),
            path: path.display().to_string(),
            checksum: checksum.into(),
        });
        let mp = if path.file_name().is_some_and(|n| n == agra::trainer::ENSEMBLE_FILE) {
            path.with_file_name("run.json")
        } else {
            path_for(path)
        };
        let Ok(text) = std::fs::read_to_string(mp) else { return Ok(()) };
        let Ok(parent) = serde_json::from_str::<RunManifest>(&text) else { return Ok(()) };
        if let Some(out) = parent.outputs.iter().find(|o| o.role == role && o.checksum != checksum) {
            return Err(agra::Error::Checksum {
                expected: out.checksum.clone(),
                actual: checksum.to_string(),
            });
        }
        for cmd in parent.lineage.into_iter().chain(std::iter::once(parent.command)) {
            if !self.manifest.lineage.contains(&cmd) {
                self.manifest.lineage.push(cmd);
            }
        }
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path, checksum: &str) {
        self.manifest.outputs.push(ArtifactRef {
            role: role.into(),
            path: path.display().to_string(),
            checksum: checksum.into(),
        });
    }

    pub fn finish(mut self, path: &Path) -> anyhow::Result<()> {
        self.manifest.finished_unix = now();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
