//! HTTP API over angioforge sessions.
//!
//! One mutating request may be in flight per session; a second one gets
//! `409 session_busy`. Reads go straight to the store and never wait.

mod error;
mod server;

use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

use angioforge_core::backend::{BackendConfig, Health};
use angioforge_core::pipeline::{
    pipeline_definition, FinalizationFailure, Pipeline, PipelineError, RecordState, Session, SessionConfig,
    SessionStatus, Stage, StepRecord, OUTPUT_NAMES, STEP_COUNT,
};
use angioforge_core::ContentHash;

pub use error::{ApiError, ErrorBody};
pub use server::BackgroundServer;

/// Upload size cap for `POST /sessions`.
pub const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;

pub struct AppState {
    pipeline: Pipeline,
    backend_config: BackendConfig,
    defaults: SessionConfig,
    busy: Mutex<HashSet<String>>,
}

impl AppState {
    /// `defaults` fills fields a client's config leaves out; its backend
    /// section is replaced by `backend_config`.
    pub fn new(pipeline: Pipeline, backend_config: BackendConfig, defaults: SessionConfig) -> Self {
        AppState {
            pipeline,
            backend_config,
            defaults,
            busy: Mutex::new(HashSet::new()),
        }
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    fn claim(self: &Arc<Self>, id: &str) -> Result<BusyGuard, ApiError> {
        let mut busy = self.busy.lock().unwrap();
        if !busy.insert(id.to_string()) {
            return Err(ApiError::busy(id));
        }
        Ok(BusyGuard {
            state: self.clone(),
            id: id.to_string(),
        })
    }
}

struct BusyGuard {
    state: Arc<AppState>,
    id: String,
}

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.state.busy.lock().unwrap().remove(&self.id);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepState {
    NotStarted,
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub index: u8,
    pub name: String,
    pub stage: Stage,
    pub state: StepState,
    pub iterations: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted_iteration: Option<u32>,
}

/// Body of `GET /sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub pipeline_version: String,
    pub backend: String,
    pub status: SessionStatus,
    pub cursor: u8,
    pub accepted: usize,
    pub total_steps: u8,
    pub source_image: ContentHash,
    pub steps: Vec<StepSummary>,
    pub outputs: BTreeMap<String, ContentHash>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finalization_error: Option<FinalizationFailure>,
}

impl SessionSummary {
    pub fn of(s: &Session) -> Self {
        let records = s.records();
        let steps = pipeline_definition()
            .steps
            .iter()
            .map(|spec| {
                let mine: Vec<&StepRecord> = records.iter().filter(|r| r.step_index == spec.index).collect();
                let accepted = mine.iter().find(|r| r.state == RecordState::Accepted).map(|r| r.iteration);
                let state = if accepted.is_some() {
                    StepState::Accepted
                } else if mine.iter().any(|r| r.state == RecordState::Pending) {
                    StepState::Pending
                } else if mine.is_empty() {
                    StepState::NotStarted
                } else {
                    StepState::Rejected
                };
                StepSummary {
                    index: spec.index,
                    name: spec.name.to_string(),
                    stage: spec.stage,
                    state,
                    iterations: mine.len() as u32,
                    accepted_iteration: accepted,
                }
            })
            .collect();
        SessionSummary {
            id: s.id.clone(),
            created_at: s.created_at,
            pipeline_version: s.pipeline_version.clone(),
            backend: s.config.backend.kind.id().to_string(),
            status: s.status,
            cursor: s.cursor(),
            accepted: s.accepted_count(),
            total_steps: STEP_COUNT,
            source_image: s.source_image.hash.clone(),
            steps,
            outputs: s.outputs.clone(),
            finalization_error: s.finalization_error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthBody {
    pub backend: String,
    pub status: String,
}

#[derive(Debug, Deserialize)]
struct RegenerateBody {
    prompt: String,
}

/// CORS policy: `None` allows any origin.
pub fn router(state: Arc<AppState>, cors_origins: Option<Vec<String>>) -> Router {
    let allow = match cors_origins {
        None => AllowOrigin::any(),
        Some(list) => AllowOrigin::list(list.iter().filter_map(|o| HeaderValue::from_str(o).ok())),
    };
    let cors = CorsLayer::new()
        .allow_origin(allow)
        .allow_methods(tower_http::cors::Any)
        .allow_headers(tower_http::cors::Any);
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/steps/{n}/regenerate", post(regenerate))
        .route("/sessions/{id}/steps/{n}/iterations/{k}/accept", post(accept))
        .route("/sessions/{id}/steps/{n}/iterations/{k}/reject", post(reject))
        .route("/sessions/{id}/artifacts/{hash}", get(artifact))
        .route("/sessions/{id}/outputs/{name}", get(output))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .layer(cors)
        .with_state(state)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

/// Runs `f` on a freshly loaded session while holding its busy flag.
async fn mutate<T: Send + 'static>(
    state: Arc<AppState>,
    id: String,
    f: impl FnOnce(&Pipeline, &mut Session) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let guard = state.claim(&id)?;
    blocking(move || {
        let _guard = guard;
        let mut session = state.pipeline.load(&id)?;
        f(&state.pipeline, &mut session)
    })
    .await
}

async fn load(state: &Arc<AppState>, id: String) -> Result<Session, ApiError> {
    let state = state.clone();
    blocking(move || Ok(state.pipeline.load(&id)?)).await
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    let backend = state.pipeline.backend().clone();
    let health = tokio::task::spawn_blocking(move || backend.health_check())
        .await
        .unwrap_or(Health::Unreachable);
    let status = match health {
        Health::Ready => "ready",
        Health::Degraded => "degraded",
        Health::Unreachable => "unreachable",
    };
    let code = if health == Health::Unreachable {
        StatusCode::SERVICE_UNAVAILABLE
    } else {
        StatusCode::OK
    };
    let body = HealthBody {
        backend: state.pipeline.backend().id().to_string(),
        status: status.to_string(),
    };
    (code, Json(body)).into_response()
}

fn merge_config(defaults: &SessionConfig, client: Option<&[u8]>) -> Result<SessionConfig, ApiError> {
    let mut base = serde_json::to_value(defaults).map_err(ApiError::internal)?;
    if let Some(bytes) = client {
        let patch: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("config: {e}")))?;
        let serde_json::Value::Object(patch) = patch else {
            return Err(ApiError::bad_request("config must be a JSON object"));
        };
        let base = base.as_object_mut().expect("config serializes to an object");
        for (k, v) in patch {
            base.insert(k, v);
        }
    }
    serde_json::from_value(base).map_err(|e| ApiError::bad_request(format!("config: {e}")))
}

async fn create_session(State(state): State<Arc<AppState>>, mut form: Multipart) -> Result<Response, ApiError> {
    let mut image = None;
    let mut config = None;
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("multipart: {e}")))?
    {
        let name = field.name().unwrap_or("").to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("multipart field {name}: {e}")))?;
        match name.as_str() {
            "image" => image = Some(bytes),
            "config" => config = Some(bytes),
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ApiError::bad_request("missing multipart field \"image\""))?;
    let mut config = merge_config(&state.defaults, config.as_deref())?;
    config.backend = state.backend_config.clone();
    let st = state.clone();
    let session = blocking(move || Ok(st.pipeline.create_session(&image, config)?)).await?;
    log::info!("created session {}", session.id);
    let location = format!("/sessions/{}", session.id);
    Ok((
        StatusCode::CREATED,
        [(header::LOCATION, location)],
        Json(SessionSummary::of(&session)),
    )
        .into_response())
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionSummary>, ApiError> {
    Ok(Json(SessionSummary::of(&load(&state, id).await?)))
}

async fn history(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Vec<StepRecord>>, ApiError> {
    Ok(Json(load(&state, id).await?.records()))
}

async fn advance(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<StepRecord>, ApiError> {
    mutate(state, id, |p, s| Ok(p.advance_step(s)?)).await.map(Json)
}

fn check_step(n: u8) -> Result<(), ApiError> {
    if (1..=STEP_COUNT).contains(&n) {
        Ok(())
    } else {
        Err(ApiError::not_found(format!("no step {n}")))
    }
}

async fn regenerate(
    State(state): State<Arc<AppState>>,
    Path((id, n)): Path<(String, u8)>,
    body: axum::body::Bytes,
) -> Result<Json<StepRecord>, ApiError> {
    check_step(n)?;
    let body: RegenerateBody = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("body: {e}")))?;
    mutate(state, id, move |p, s| {
        match s.status {
            SessionStatus::Complete => return Err(PipelineError::SessionComplete.into()),
            SessionStatus::Aborted => return Err(PipelineError::SessionAborted.into()),
            SessionStatus::InProgress => {}
        }
        let cursor = s.cursor();
        if n != cursor {
            return Err(PipelineError::StepNotCurrent { step: n, cursor }.into());
        }
        Ok(p.regenerate_step(s, &body.prompt)?)
    })
    .await
    .map(Json)
}

/// Accept/reject. Repeating a decision already in effect returns the
/// record unchanged.
async fn decide(state: Arc<AppState>, id: String, n: u8, k: u32, want: RecordState) -> Result<Json<StepRecord>, ApiError> {
    check_step(n)?;
    mutate(state, id, move |p, s| {
        match s.state_of(n, k) {
            None => return Err(PipelineError::RecordNotFound { step: n, iteration: k }.into()),
            Some(current) if current == want => {}
            Some(_) if want == RecordState::Accepted => p.accept_step(s, n, k)?,
            Some(_) => p.reject_step(s, n, k)?,
        }
        Ok(s.record(n, k).expect("record exists"))
    })
    .await
    .map(Json)
}

async fn accept(
    State(state): State<Arc<AppState>>,
    Path((id, n, k)): Path<(String, u8, u32)>,
) -> Result<Json<StepRecord>, ApiError> {
    decide(state, id, n, k, RecordState::Accepted).await
}

async fn reject(
    State(state): State<Arc<AppState>>,
    Path((id, n, k)): Path<(String, u8, u32)>,
) -> Result<Json<StepRecord>, ApiError> {
    decide(state, id, n, k, RecordState::Rejected).await
}

fn bytes_response(media_type: &'static str, bytes: Vec<u8>, filename: Option<&str>) -> Response {
    let mut res = ([(header::CONTENT_TYPE, media_type)], bytes).into_response();
    res.headers_mut().insert(
        header::CACHE_CONTROL,
        HeaderValue::from_static("public, max-age=31536000, immutable"),
    );
    if let Some(name) = filename {
        if let Ok(v) = HeaderValue::from_str(&format!("attachment; filename=\"{name}\"")) {
            res.headers_mut().insert(header::CONTENT_DISPOSITION, v);
        }
    }
    res
}

async fn artifact(
    State(state): State<Arc<AppState>>,
    Path((id, hash)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let hash: ContentHash = hash.parse().map_err(ApiError::bad_request)?;
    let st = state.clone();
    blocking(move || {
        let session = st.pipeline.load(&id)?;
        let info = session
            .artifacts
            .get(&hash)
            .ok_or_else(|| ApiError::not_found(format!("artifact {hash} is not part of session {id}")))?;
        let bytes = st.pipeline.store().read_artifact(&id, &hash, info.kind)?;
        Ok(bytes_response(info.kind.media_type(), bytes, None))
    })
    .await
}

async fn output(
    State(state): State<Arc<AppState>>,
    Path((id, name)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    if !OUTPUT_NAMES.contains(&name.as_str()) {
        return Err(ApiError::not_found(format!("no output named {name}")));
    }
    let st = state.clone();
    blocking(move || {
        let session = st.pipeline.load(&id)?;
        let hash = session
            .outputs
            .get(&name)
            .ok_or_else(|| ApiError::not_found(format!("{name} has not been produced yet")))?;
        let kind = session.artifacts[hash].kind;
        let bytes = st.pipeline.store().read_artifact(&id, hash, kind)?;
        Ok(bytes_response(kind.media_type(), bytes, Some(&name)))
    })
    .await
}
