//! JSON HTTP API over [`Service`].

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use zotrag_core::config::AVAILABLE_MODELS;
use zotrag_core::session::AskOverrides;
use zotrag_core::{LibraryType, Service, ServiceError};

const INDEX_HTML: &str = include_str!("../static/index.html");

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        match &self.0 {
            ServiceError::NoIndex => (StatusCode::CONFLICT, "no_index"),
            ServiceError::IndexStale => (StatusCode::CONFLICT, "index_stale"),
            ServiceError::Busy => (StatusCode::CONFLICT, "busy"),
            ServiceError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            ServiceError::UnknownJob(_) => (StatusCode::NOT_FOUND, "unknown_job"),
            ServiceError::InvalidParams(_) => (StatusCode::BAD_REQUEST, "invalid_params"),
            ServiceError::Unauthorized { .. } => (StatusCode::BAD_GATEWAY, "unauthorized"),
            ServiceError::ContextOverflow(_) => (StatusCode::BAD_GATEWAY, "context_overflow"),
            ServiceError::Pipeline { .. } => (StatusCode::BAD_GATEWAY, "pipeline"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            tracing::warn!(code, error = %self.0, "request failed");
        }
        (status, Json(json!({ "error": self.0.to_string(), "code": code }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError(ServiceError::InvalidParams(message.into()))
}

/// Runs a blocking service call off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Pipeline {
            stage: "worker",
            message: e.to_string(),
        }))?
        .map_err(ApiError)
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/api/health", get(health))
        .route("/api/config", get(get_config).put(put_config))
        .route("/api/chunking", post(apply_chunking))
        .route("/api/models", get(models))
        .route("/api/ingest", post(start_ingest))
        .route("/api/ingest/{job_id}", get(ingest_status))
        .route("/api/ask", post(ask))
        .route("/api/sessions/{id}/history", get(history))
        .route("/api/sessions/{id}/history/export", get(export_history))
        .with_state(service)
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn get_config(State(service): State<Arc<Service>>) -> Json<Value> {
    Json(service.effective_config())
}

async fn put_config(State(service): State<Arc<Service>>, body: Result<Json<Value>, axum::extract::rejection::JsonRejection>) -> ApiResult<Json<Value>> {
    let Json(patch) = body.map_err(|e| bad_request(e.body_text()))?;
    Ok(Json(service.update_config(&patch)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChunkingBody {
    chunk_size: usize,
    chunk_overlap: usize,
}

async fn apply_chunking(
    State(service): State<Arc<Service>>,
    body: Result<Json<ChunkingBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(body) = body.map_err(|e| bad_request(e.body_text()))?;
    let mut params = service.config().chunking;
    params.chunk_size = body.chunk_size;
    params.chunk_overlap = body.chunk_overlap;
    let ack = service.apply_chunking_params(params)?;
    Ok(Json(serde_json::to_value(ack).expect("ack serializes")))
}

async fn models() -> Json<Value> {
    Json(json!({ "models": AVAILABLE_MODELS }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestBody {
    library_type: LibraryType,
    library_id: String,
}

async fn start_ingest(
    State(service): State<Arc<Service>>,
    body: Result<Json<IngestBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let Json(body) = body.map_err(|e| bad_request(e.body_text()))?;
    let job_id = blocking(move || service.start_ingest(body.library_type, &body.library_id)).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))))
}

async fn ingest_status(State(service): State<Arc<Service>>, Path(job_id): Path<String>) -> ApiResult<Json<Value>> {
    let report = service.job_report(&job_id)?;
    Ok(Json(serde_json::to_value(report).expect("report serializes")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AskBody {
    session_id: String,
    question: String,
    #[serde(default)]
    overrides: AskOverrides,
}

async fn ask(
    State(service): State<Arc<Service>>,
    body: Result<Json<AskBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(body) = body.map_err(|e| bad_request(e.body_text()))?;
    let answer = blocking(move || service.ask(&body.session_id, &body.question, &body.overrides)).await?;
    Ok(Json(serde_json::to_value(answer).expect("answer serializes")))
}

async fn history(State(service): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let turns = service.history(&id)?;
    Ok(Json(json!({ "session_id": id, "turns": turns })))
}

async fn export_history(State(service): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = service.export_history(&id)?;
    // id is restricted to [A-Za-z0-9_-], so it is safe inside the header
    let disposition = format!("attachment; filename=\"chat_history_{id}.txt\"");
    Ok((
        [
            (header::CONTENT_TYPE, "text/plain; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        text,
    )
        .into_response())
}
