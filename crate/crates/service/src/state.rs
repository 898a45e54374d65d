//! Shared service state: the data directory, per-workspace locks and the
//! background training job.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rexloop_core::workspace::validate_id;
use rexloop_core::{JobStatus, Workspace};

use crate::error::{ApiError, ApiResult};

/// Per-workspace coordination. `write` serializes mutations; `training`
/// holds the index of the round being trained, if any.
#[derive(Default)]
pub struct Handle {
    pub write: tokio::sync::Mutex<()>,
    training: Mutex<Option<usize>>,
}

impl Handle {
    pub fn training_round(&self) -> Option<usize> {
        *self.training.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn claim(&self, round: usize) -> bool {
        let mut slot = self.training.lock().unwrap_or_else(|e| e.into_inner());
        if slot.is_some() {
            return false;
        }
        *slot = Some(round);
        true
    }

    fn release(&self) {
        *self.training.lock().unwrap_or_else(|e| e.into_inner()) = None;
    }
}

pub struct AppState {
    data_dir: PathBuf,
    handles: Mutex<HashMap<String, Arc<Handle>>>,
    pub create: tokio::sync::Mutex<()>,
}

impl AppState {
    /// Opens the data directory. Workspaces whose status still says
    /// `training` were interrupted by a shutdown and are marked failed.
    pub fn new(data_dir: &Path) -> rexloop_core::Result<Self> {
        if !data_dir.is_dir() {
            return Err(rexloop_core::Error::Workspace(format!(
                "data directory {} does not exist",
                data_dir.display()
            )));
        }
        let state = AppState {
            data_dir: data_dir.to_path_buf(),
            handles: Mutex::new(HashMap::new()),
            create: tokio::sync::Mutex::new(()),
        };
        for id in state.workspace_ids()? {
            let ws = Workspace::open(&state.data_dir.join(&id))?;
            if let JobStatus::Training { round, .. } = ws.status()? {
                ws.merge_verdicts(round + 1, round)?;
                ws.set_status(&JobStatus::Failed {
                    round,
                    reason: "interrupted by a service restart".into(),
                })?;
            }
        }
        Ok(state)
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn workspace_ids(&self) -> rexloop_core::Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.data_dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if validate_id(&name).is_ok() && entry.path().join("workspace.json").is_file() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn workspace_path(&self, id: &str) -> ApiResult<PathBuf> {
        validate_id(id).map_err(|e| ApiError::not_found(e.to_string()))?;
        Ok(self.data_dir.join(id))
    }

    pub fn open(&self, id: &str) -> ApiResult<Workspace> {
        let path = self.workspace_path(id)?;
        if !path.join("workspace.json").is_file() {
            return Err(ApiError::not_found(format!("workspace `{id}` not found")));
        }
        Ok(Workspace::open(&path)?)
    }

    pub fn handle(&self, id: &str) -> Arc<Handle> {
        let mut handles = self.handles.lock().unwrap_or_else(|e| e.into_inner());
        handles.entry(id.to_string()).or_default().clone()
    }

    /// Round index that newly submitted verdicts apply to.
    pub fn verdict_target(&self, ws: &Workspace) -> ApiResult<usize> {
        match self.handle(ws.id()).training_round() {
            Some(k) => Ok(k + 1),
            None => Ok(ws.round_count()?),
        }
    }
}

/// Starts training the next round in the background. Verdicts recorded for
/// that round are frozen from here on; later ones go to the following round.
pub fn start_job(state: &Arc<AppState>, ws: Workspace) -> ApiResult<usize> {
    let handle = state.handle(ws.id());
    let round = ws.round_count()?;
    if !handle.claim(round) {
        return Err(ApiError::conflict(
            "job_running",
            format!("workspace `{}` is already training", ws.id()),
        ));
    }
    let epochs = ws.config().hyper.epochs;
    if let Err(err) = ws.set_status(&JobStatus::Training { round, epoch: 0, epochs }) {
        handle.release();
        return Err(err.into());
    }
    tokio::task::spawn_blocking(move || {
        let result = ws.run_next_round(None, &mut |record| {
            let _ = ws.set_status(&JobStatus::Training {
                round,
                epoch: record.epoch,
                epochs,
            });
        });
        let _guard = handle.write.blocking_lock();
        let status = match result {
            Ok(record) => {
                tracing::info!(workspace = ws.id(), round = record.round, "round finished");
                JobStatus::Idle
            }
            Err(err) => {
                tracing::warn!(workspace = ws.id(), round, error = %err, "round failed");
                if let Err(merge) = ws.merge_verdicts(round + 1, round) {
                    tracing::error!(workspace = ws.id(), error = %merge, "could not merge late verdicts");
                }
                JobStatus::Failed {
                    round,
                    reason: err.to_string(),
                }
            }
        };
        if let Err(err) = ws.set_status(&status) {
            tracing::error!(workspace = ws.id(), error = %err, "could not persist job status");
        }
        handle.release();
    });
    Ok(round)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handle_admits_one_job_at_a_time() {
        let handle = Handle::default();
        assert_eq!(handle.training_round(), None);
        assert!(handle.claim(3));
        assert!(!handle.claim(4));
        assert_eq!(handle.training_round(), Some(3));
        handle.release();
        assert!(handle.claim(4));
    }

    #[test]
    fn ids_outside_the_allowed_alphabet_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let state = AppState::new(dir.path()).unwrap();
        assert_eq!(state.workspace_path("../x").unwrap_err().status, axum::http::StatusCode::NOT_FOUND);
        assert!(state.workspace_ids().unwrap().is_empty());
    }
}
