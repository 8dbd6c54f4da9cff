use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use sdft_core::domain::{has_errors, validate_job};
use sdft_core::synthesis::{DirImages, Engine, ImageProvider, JobFile, SynthesisReport};

use crate::{ApiError, AppState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SynthesisReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Triplets the store refused (for example duplicate record ids).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub store_errors: Vec<String>,
}

/// Validates the job up front, then runs it on a background task and
/// records every produced triplet as pending.
pub(crate) fn submit(state: &AppState, file: JobFile) -> Result<String, ApiError> {
    let job = file.resolve(&state.image_root).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let violations = validate_job(&job);
    if has_errors(&violations) {
        let message = violations.iter().filter(|v| v.is_error()).map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(ApiError::unprocessable(message));
    }
    let job_id = job.job_id.clone();
    {
        let mut jobs = state.jobs.write();
        if jobs.contains_key(&job_id) {
            return Err(ApiError::conflict("duplicate_job", format!("job '{job_id}' already exists")));
        }
        jobs.insert(
            job_id.clone(),
            JobStatus { job_id: job_id.clone(), state: JobState::Running, report: None, error: None, store_errors: vec![] },
        );
    }
    let state = state.clone();
    let id = job_id.clone();
    tokio::spawn(async move {
        let images: Arc<dyn ImageProvider> = Arc::new(DirImages::new(state.image_root.clone()));
        let engine = Engine::new(state.gateway.clone(), images.clone()).with_templates((*state.templates).clone());
        let status = match engine.run_job(&job).await {
            Ok(output) => {
                let mut store_errors = Vec::new();
                let mut stored = BTreeSet::new();
                for triplet in output.triplets {
                    if stored.insert(triplet.image.digest.clone()) {
                        match images.load(&triplet.image).await {
                            Ok(loaded) => {
                                if let Err(e) = state.store.images().put(&loaded) {
                                    store_errors.push(format!("image {}: {e}", triplet.image.digest));
                                }
                            }
                            Err(e) => store_errors.push(format!("image {}: {e}", triplet.image.digest)),
                        }
                    }
                    if let Err(e) = state.store.record_dialogue(triplet) {
                        store_errors.push(e.to_string());
                    }
                }
                JobStatus { job_id: id.clone(), state: JobState::Completed, report: Some(output.report), error: None, store_errors }
            }
            Err(e) => JobStatus {
                job_id: id.clone(),
                state: JobState::Failed,
                report: None,
                error: Some(e.to_string()),
                store_errors: vec![],
            },
        };
        state.jobs.write().insert(id, status);
    });
    Ok(job_id)
}
