//! HTTP front ends: the annotation service and the reference scorer stubs.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::annotation::{AnnotationError, AnnotationRecord, AnnotationStore, Protocol};
use crate::gateway::{
    GenerateRequest, GenerateResponse, GeneratorBackend, NliBackend, NliRequest, NliResponse,
    PerplexityBackend, PerplexityRequest, PerplexityResponse, ScoreError,
};

/// JSON error body `{"error": kind, "message": text}` with a status code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "BadRequest",
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error": self.kind, "message": self.message})),
        )
            .into_response()
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let (status, kind) = match &e {
            AnnotationError::UnknownAnnotator(_) => (StatusCode::FORBIDDEN, "UnknownAnnotator"),
            AnnotationError::UnknownTask(_) => (StatusCode::NOT_FOUND, "UnknownTask"),
            AnnotationError::Gating(_) => (StatusCode::UNPROCESSABLE_ENTITY, "GatingViolation"),
            AnnotationError::SlotMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "GatingViolation"),
            AnnotationError::ProtocolMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "ProtocolMismatch"),
            AnnotationError::StaleRevision { .. } => (StatusCode::CONFLICT, "StaleRevision"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        };
        Self {
            status,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<ScoreError> for ApiError {
    fn from(e: ScoreError) -> Self {
        let status = match e {
            ScoreError::InvalidInput(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            kind: "ScoreError",
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: String,
    protocol: String,
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: String,
}

#[derive(Debug, Deserialize)]
struct ProtocolQuery {
    protocol: String,
}

fn parse_protocol(s: &str) -> Result<Protocol, ApiError> {
    s.parse().map_err(ApiError::bad_request)
}

async fn next_task(
    State(store): State<Arc<AnnotationStore>>,
    Query(q): Query<NextQuery>,
) -> Result<Response, ApiError> {
    let protocol = parse_protocol(&q.protocol)?;
    Ok(Json(store.next_task(&q.annotator, protocol)?).into_response())
}

async fn submit_rating(
    State(store): State<Arc<AnnotationStore>>,
    Json(rec): Json<AnnotationRecord>,
) -> Result<Response, ApiError> {
    let task_id = rec.task_id.clone();
    let revision = tokio::task::spawn_blocking(move || store.submit(rec))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "Internal",
            message: e.to_string(),
        })??;
    Ok((
        StatusCode::CREATED,
        Json(json!({"task_id": task_id, "revision": revision})),
    )
        .into_response())
}

async fn progress(
    State(store): State<Arc<AnnotationStore>>,
    Query(q): Query<AnnotatorQuery>,
) -> Result<Response, ApiError> {
    Ok(Json(store.progress(&q.annotator)?).into_response())
}

async fn export(
    State(store): State<Arc<AnnotationStore>>,
    Query(q): Query<ProtocolQuery>,
) -> Result<Response, ApiError> {
    let protocol = parse_protocol(&q.protocol)?;
    Ok(Json(store.export(protocol)?).into_response())
}

/// Annotation API, with the UI bundle served from `static_dir` for every
/// other path.
pub fn annotation_router(store: Arc<AnnotationStore>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/v1/tasks/next", get(next_task))
        .route("/v1/ratings", post(submit_rating))
        .route("/v1/progress", get(progress))
        .route("/v1/export", get(export))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Backends behind the scorer stub endpoints.
#[derive(Clone)]
pub struct ScorerStubs {
    pub perplexity: Arc<dyn PerplexityBackend>,
    pub nli: Arc<dyn NliBackend>,
    pub generator: Arc<dyn GeneratorBackend>,
}

async fn stub_perplexity(
    State(s): State<ScorerStubs>,
    Json(req): Json<PerplexityRequest>,
) -> Result<Json<PerplexityResponse>, ApiError> {
    if req.texts.iter().any(|t| t.is_empty()) {
        return Err(ScoreError::InvalidInput("empty text".into()).into());
    }
    Ok(Json(PerplexityResponse {
        perplexities: s.perplexity.perplexities(&req.texts)?,
    }))
}

async fn stub_nli(
    State(s): State<ScorerStubs>,
    Json(req): Json<NliRequest>,
) -> Result<Json<NliResponse>, ApiError> {
    let pairs: Vec<(String, String)> = req.pairs.into_iter().map(|p| (p.premise, p.hypothesis)).collect();
    Ok(Json(NliResponse {
        probs: s.nli.nli(&pairs)?,
    }))
}

async fn stub_generate(
    State(s): State<ScorerStubs>,
    Json(req): Json<GenerateRequest>,
) -> Result<Json<GenerateResponse>, ApiError> {
    if req.num_outputs == 0 {
        return Err(ScoreError::InvalidInput("num_outputs must be at least 1".into()).into());
    }
    Ok(Json(GenerateResponse {
        outputs: s
            .generator
            .generate(&req.inputs, req.num_outputs, req.strategy, req.seed)?,
    }))
}

/// `/v1/perplexity`, `/v1/nli` and `/v1/generate` over in-process backends.
pub fn scorer_router(stubs: ScorerStubs) -> Router {
    Router::new()
        .route("/v1/perplexity", post(stub_perplexity))
        .route("/v1/nli", post(stub_nli))
        .route("/v1/generate", post(stub_generate))
        .with_state(stubs)
}
