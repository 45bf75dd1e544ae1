//! The run manifest: which stages are done, what they wrote, and how long
//! their work items took.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use qream_core::evalkit::StageSpan;
use qream_core::records::{digest_file, write_atomic};
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    #[default]
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secs: Option<f64>,
    /// Output path relative to the run directory -> content digest.
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_digest: String,
    pub seed: u64,
    /// The effective config after overrides.
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
    #[serde(default)]
    pub spans: Vec<StageSpan>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: &Path) -> Result<Option<Self>, Failure> {
        let path = Self::path(dir);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Failure::Data(format!("{}: {e}", path.display()))),
        }
    }

    /// Opens the manifest of a run directory. An existing manifest written
    /// under a different config is an error unless `force` discards it.
    pub fn open(dir: &Path, digest: &str, seed: u64, config: serde_json::Value, force: bool) -> Result<Self, Failure> {
        if let Some(existing) = Self::load(dir)? {
            if existing.config_digest == digest {
                return Ok(existing);
            }
            if !force {
                return Err(Failure::Config(format!(
                    "{} was written under a different config (digest {}); use a new output_dir or --force",
                    dir.display(),
                    existing.config_digest.get(..12).unwrap_or(&existing.config_digest)
                )));
            }
            tracing::warn!(dir = %dir.display(), "config changed; discarding the previous manifest");
        }
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: digest.to_string(),
            seed,
            config,
            stages: BTreeMap::new(),
            spans: Vec::new(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
        let mut json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        json.push(b'\n');
        write_atomic(&Self::path(dir), &json).map_err(|e| Failure::Data(e.to_string()))
    }

    pub fn status(&self, stage: &str) -> StageStatus {
        self.stages.get(stage).map(|s| s.status).unwrap_or_default()
    }

    /// Done, with every recorded artifact present and unchanged.
    pub fn is_done(&self, stage: &str, dir: &Path) -> bool {
        let Some(record) = self.stages.get(stage) else {
            return false;
        };
        record.status == StageStatus::Done
            && record
                .artifacts
                .iter()
                .all(|(rel, digest)| digest_file(&dir.join(rel)).is_ok_and(|d| &d == digest))
    }

    pub fn require(&self, stage: &str, dir: &Path) -> Result<(), Failure> {
        if self.is_done(stage, dir) {
            Ok(())
        } else {
            Err(Failure::Dependency {
                stage: stage.to_string(),
                status: match self.status(stage) {
                    StageStatus::Done => "done but its outputs changed on disk".into(),
                    s => format!("{s:?}").to_lowercase(),
                },
            })
        }
    }

    pub fn begin(&mut self, stage: &str) {
        let record = self.stages.entry(stage.to_string()).or_default();
        record.status = StageStatus::Pending;
        record.started_at = Some(now());
        record.error = None;
        self.spans.retain(|s| s.stage != stage);
    }

    pub fn finish(&mut self, stage: &str, dir: &Path, artifacts: &[PathBuf]) -> Result<(), Failure> {
        let mut digests = BTreeMap::new();
        for path in artifacts {
            let digest = digest_file(path).map_err(|e| Failure::Data(e.to_string()))?;
            let rel = path.strip_prefix(dir).unwrap_or(path);
            digests.insert(rel.to_string_lossy().into_owned(), digest);
        }
        let record = self.stages.entry(stage.to_string()).or_default();
        record.status = StageStatus::Done;
        record.secs = record.started_at.map(|t| (now() - t).max(0.0));
        record.artifacts = digests;
        Ok(())
    }

    pub fn fail(&mut self, stage: &str, error: &Failure) {
        let record = self.stages.entry(stage.to_string()).or_default();
        record.status = StageStatus::Failed;
        record.secs = record.started_at.map(|t| (now() - t).max(0.0));
        record.error = Some(error.to_string());
    }

    pub fn record_span(&mut self, stage: &str, item: &str, secs: f64) {
        self.spans.push(StageSpan {
            stage: stage.to_string(),
            item: Some(item.to_string()),
            secs,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn done_requires_unchanged_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a.jsonl");
        std::fs::write(&out, "one\n").unwrap();
        let mut m = RunManifest::open(dir.path(), "d1", 1, serde_json::Value::Null, false).unwrap();
        assert!(m.require("seeds", dir.path()).is_err());
        m.begin("seeds");
        m.finish("seeds", dir.path(), std::slice::from_ref(&out)).unwrap();
        assert!(m.is_done("seeds", dir.path()));
        assert!(m.stages["seeds"].artifacts.contains_key("a.jsonl"));
        std::fs::write(&out, "two\n").unwrap();
        assert!(!m.is_done("seeds", dir.path()));
        let err = m.require("seeds", dir.path()).unwrap_err();
        assert!(err.to_string().contains("seeds"));
    }

    #[test]
    fn changed_config_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::open(dir.path(), "d1", 1, serde_json::Value::Null, false).unwrap();
        m.save(dir.path()).unwrap();
        assert!(RunManifest::open(dir.path(), "d1", 1, serde_json::Value::Null, false).is_ok());
        assert!(matches!(
            RunManifest::open(dir.path(), "d2", 1, serde_json::Value::Null, false),
            Err(Failure::Config(_))
        ));
        let fresh = RunManifest::open(dir.path(), "d2", 1, serde_json::Value::Null, true).unwrap();
        assert!(fresh.stages.is_empty());
    }
}
