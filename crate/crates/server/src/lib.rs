//! HTTP/1.1 JSON API for dialogue review, under `/api/v1`.
//!
//! | Method | Path | Result |
//! |---|---|---|
//! | POST | `/jobs` | 202 `{job_id}`; the job runs in the background |
//! | GET | `/jobs/{id}` | job status and synthesis report |
//! | GET | `/dialogues?status=&concept=&flagged=&page=&page_size=` | a page of dialogues |
//! | GET | `/dialogues/{id}` | one dialogue |
//! | POST | `/dialogues/{id}/review` | the updated dialogue |
//! | GET | `/images/{digest}` | image bytes with their content type |
//! | GET | `/export?approved_only=&mode=` | JSONL body; manifest digest in `x-manifest-digest` |
//!
//! Errors are `{"code": ..., "message": ...}` with status 404 (unknown job,
//! dialogue or image), 409 (duplicate id, illegal review transition, export
//! blocked by invalid records) or 422 (malformed body or query, empty edit,
//! invalid job).

mod error;
mod jobs;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;
use serde::Deserialize;

use sdft_core::curation::{CurationStore, ListFilter, ReviewRequest};
use sdft_core::dataset::ReviewStatus;
use sdft_core::gateway::Gateway;
use sdft_core::synthesis::JobFile;
use sdft_core::templates::TemplateLibrary;
use sdft_core::StructureMode;

pub use error::ApiError;
pub use jobs::{JobState, JobStatus};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<CurationStore>,
    pub gateway: Arc<Gateway>,
    pub templates: Arc<TemplateLibrary>,
    /// Relative image paths in submitted jobs resolve against this directory.
    pub image_root: PathBuf,
    jobs: Arc<RwLock<HashMap<String, JobStatus>>>,
}

impl AppState {
    pub fn new(store: Arc<CurationStore>, gateway: Arc<Gateway>, templates: TemplateLibrary, image_root: PathBuf) -> Self {
        Self { store, gateway, templates: Arc::new(templates), image_root, jobs: Arc::default() }
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(job_status))
        .route("/dialogues", get(list_dialogues))
        .route("/dialogues/{id}", get(get_dialogue))
        .route("/dialogues/{id}/review", post(review_dialogue))
        .route("/images/{digest}", get(get_image))
        .route("/export", get(export))
        .fallback(|| async { ApiError::not_found("no such route") });
    Router::new().nest("/api/v1", api).with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "serving /api/v1");
    axum::serve(listener, router(state)).await
}

async fn submit_job(
    State(state): State<AppState>,
    body: Result<Json<JobFile>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(file) = body.map_err(|e| ApiError::unprocessable(e.body_text()))?;
    let job_id = jobs::submit(&state, file)?;
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "job_id": job_id }))))
}

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobStatus>, ApiError> {
    state.jobs.read().get(&id).cloned().map(Json).ok_or_else(|| ApiError::not_found(format!("unknown job '{id}'")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ListQuery {
    status: Option<ReviewStatus>,
    concept: Option<String>,
    flagged: Option<bool>,
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn list_dialogues(
    State(state): State<AppState>,
    query: Result<Query<ListQuery>, QueryRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::unprocessable(e.body_text()))?;
    let filter =
        ListFilter { status: q.status, concept_id: q.concept, flagged: q.flagged, page: q.page, page_size: q.page_size };
    Ok(Json(state.store.list(&filter)))
}

async fn get_dialogue(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let dialogue = state.store.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown record '{id}'")))?;
    Ok(Json(dialogue.view()))
}

async fn review_dialogue(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ReviewRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(request) = body.map_err(|e| ApiError::unprocessable(e.body_text()))?;
    let updated = state.store.review(&id, request)?;
    Ok(Json(updated.view()))
}

async fn get_image(State(state): State<AppState>, Path(digest): Path<String>) -> Result<Response, ApiError> {
    let image = state.store.images().get(&digest).ok_or_else(|| ApiError::not_found(format!("unknown image '{digest}'")))?;
    Ok(([(header::CONTENT_TYPE, image.media_type.mime())], Body::from(image.bytes.to_vec())).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportQuery {
    approved_only: Option<bool>,
    mode: Option<String>,
}

async fn export(
    State(state): State<AppState>,
    query: Result<Query<ExportQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::unprocessable(e.body_text()))?;
    let mode: StructureMode = match q.mode.as_deref() {
        None => StructureMode::Full,
        Some(m) => m.parse().map_err(ApiError::unprocessable)?,
    };
    let rendered = state.store.export(mode, q.approved_only.unwrap_or(true))?;
    let manifest = rendered.manifest;
    let text = String::from_utf8(rendered.bytes).expect("exports are UTF-8");
    let lines: Vec<Result<String, std::convert::Infallible>> = text.split_inclusive('\n').map(|l| Ok(l.to_string())).collect();
    let mut response = Body::from_stream(futures::stream::iter(lines)).into_response();
    let headers = response.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
    headers.insert("x-manifest-digest", HeaderValue::from_str(&manifest.digest).expect("hex digest"));
    headers.insert("x-record-count", HeaderValue::from(manifest.record_count));
    Ok(response)
}
