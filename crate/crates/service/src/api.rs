//! JSON HTTP API over a [`Snapshot`].

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::snapshot::{ServeError, Snapshot};

const DEFAULT_K: usize = 10;
const DEFAULT_LIMIT: usize = 20;

/// Shared, swappable snapshot. Requests clone the inner `Arc`, so a swap
/// never blocks on running queries.
#[derive(Clone)]
pub struct AppState {
    snapshot: Arc<RwLock<Arc<Snapshot>>>,
}

impl AppState {
    pub fn new(snapshot: Snapshot) -> Self {
        AppState {
            snapshot: Arc::new(RwLock::new(Arc::new(snapshot))),
        }
    }

    pub fn current(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn swap(&self, snapshot: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
    }
}

pub struct ApiError(ServeError);

impl From<ServeError> for ApiError {
    fn from(e: ServeError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            ServeError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServeError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
        };
        (
            status,
            Json(json!({ "error": kind, "detail": self.0.to_string() })),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Integer query parameter, parsed here so malformed values get a JSON error.
fn parse_count(name: &str, raw: Option<&str>, default: usize) -> Result<usize, ServeError> {
    match raw {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| {
            ServeError::BadRequest(format!("`{name}` must be a non-negative integer"))
        }),
    }
}

pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/aspects", get(aspects))
        .route("/papers", get(search))
        .route("/papers/{id}", get(paper))
        .route("/papers/{id}/similar", get(similar))
        .route("/papers/{id}/bundle", get(bundle))
        .with_state(state);
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app.fallback(|| async { ApiError(ServeError::NotFound("no such route".into())) })
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let snapshot = state.current();
    Json(json!({ "status": "ok", "papers": snapshot.corpus().len() }))
}

async fn aspects(State(state): State<AppState>) -> Json<crate::snapshot::AspectsResponse> {
    Json(state.current().aspects())
}

async fn paper(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<crate::snapshot::PaperView> {
    Ok(Json(state.current().paper(&id)?))
}

#[derive(Deserialize)]
struct SearchParams {
    query: Option<String>,
    limit: Option<String>,
}

async fn search(
    State(state): State<AppState>,
    Query(params): Query<SearchParams>,
) -> ApiResult<Vec<crate::snapshot::PaperSummary>> {
    let limit = parse_count("limit", params.limit.as_deref(), DEFAULT_LIMIT)?;
    Ok(Json(
        state
            .current()
            .search(params.query.as_deref().unwrap_or(""), limit)?,
    ))
}

#[derive(Deserialize)]
struct SimilarParams {
    aspect: Option<String>,
    method: Option<String>,
    k: Option<String>,
}

async fn similar(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<SimilarParams>,
) -> ApiResult<crate::snapshot::SimilarResponse> {
    let k = parse_count("k", params.k.as_deref(), DEFAULT_K)?;
    let snapshot = state.current();
    Ok(Json(snapshot.similar(
        &id,
        params.aspect.as_deref(),
        params.method.as_deref(),
        k,
    )?))
}

#[derive(Deserialize)]
struct BundleParams {
    k: Option<String>,
}

async fn bundle(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<BundleParams>,
) -> ApiResult<crate::snapshot::BundleResponse> {
    let k = parse_count("k", params.k.as_deref(), DEFAULT_K)?;
    Ok(Json(state.current().bundle(&id, k)?))
}
