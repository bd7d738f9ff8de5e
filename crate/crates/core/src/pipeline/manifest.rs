use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::io;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    /// Relative to the run directory.
    pub artifacts: Vec<String>,
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderIdentity {
    pub kind: String,
    pub model_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    pub seed: u64,
    pub provider: ProviderIdentity,
    pub created_at: u64,
    pub updated_at: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(run_id: String, config_digest: String, seed: u64, provider: ProviderIdentity) -> Self {
        let now = unix_now();
        Self {
            run_id,
            config_digest,
            seed,
            provider,
            created_at: now,
            updated_at: now,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Option<Self>, PipelineError> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        io::read_json(&path).map(Some).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn save(&mut self, run_dir: &Path) -> Result<(), PipelineError> {
        self.updated_at = unix_now();
        let path = run_dir.join(MANIFEST_FILE);
        io::write_json(&path, self).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn status(&self, stage: &str) -> StageStatus {
        self.stages.get(stage).map_or(StageStatus::Pending, |r| r.status)
    }

    /// Done and every recorded artifact still on disk.
    pub fn is_done(&self, stage: &str, run_dir: &Path) -> bool {
        self.stages.get(stage).is_some_and(|r| {
            r.status == StageStatus::Done && r.artifacts.iter().all(|a| run_dir.join(a).exists())
        })
    }

    pub fn mark_started(&mut self, stage: &str) {
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                status: StageStatus::Pending,
                artifacts: Vec::new(),
                started_at: Some(unix_now()),
                finished_at: None,
                error: None,
            },
        );
    }

    pub fn mark_done(&mut self, stage: &str, artifacts: Vec<String>) {
        let rec = self.stages.entry(stage.to_string()).or_insert_with(|| StageRecord {
            status: StageStatus::Pending,
            artifacts: Vec::new(),
            started_at: None,
            finished_at: None,
            error: None,
        });
        rec.status = StageStatus::Done;
        rec.artifacts = artifacts;
        rec.finished_at = Some(unix_now());
        rec.error = None;
    }

    pub fn mark_failed(&mut self, stage: &str, error: String) {
        let rec = self.stages.entry(stage.to_string()).or_insert_with(|| StageRecord {
            status: StageStatus::Pending,
            artifacts: Vec::new(),
            started_at: None,
            finished_at: None,
            error: None,
        });
        rec.status = StageStatus::Failed;
        rec.finished_at = Some(unix_now());
        rec.error = Some(error);
    }

    /// Marks stages as pending so they rerun.
    pub fn invalidate(&mut self, stages: &[String]) {
        for s in stages {
            self.stages.remove(s);
        }
    }
}

/// Exclusive ownership of a run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(run_dir).map_err(|e| PipelineError::Io {
            path: run_dir.display().to_string(),
            source: e,
        })?;
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(PipelineError::Io {
                path: path.display().to_string(),
                source: e,
            }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(PipelineError::Locked(_))));
        drop(lock);
        RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn done_requires_artifacts_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new(
            "r".into(),
            "d".into(),
            0,
            ProviderIdentity { kind: "mock".into(), model_name: "mock".into() },
        );
        std::fs::write(dir.path().join("a.jsonl"), "").unwrap();
        m.mark_done("split", vec!["a.jsonl".into()]);
        assert!(m.is_done("split", dir.path()));
        std::fs::remove_file(dir.path().join("a.jsonl")).unwrap();
        assert!(!m.is_done("split", dir.path()));
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap().unwrap(), m);
    }
}
