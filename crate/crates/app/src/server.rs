//! HTTP inference service over an immutable checkpoint and document store.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::api::{answer, DocumentDetail, DocumentSummary, RetrieveRequest, SCHEMA_VERSION};
use crate::store::DocStore;
use formquery_core::learn::Checkpoint;
use formquery_core::retrieve::RetrieveError;

pub struct ServeState {
    pub checkpoint: Checkpoint,
    pub store: DocStore,
    pub requests: AtomicU64,
}

impl ServeState {
    pub fn new(checkpoint: Checkpoint, store: DocStore) -> Self {
        Self {
            checkpoint,
            store,
            requests: AtomicU64::new(0),
        }
    }
}

type Shared = Arc<ServeState>;

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(what: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown document {what:?}"))
}

async fn healthz(State(s): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "documents": s.store.docs.len(),
        "requests": s.requests.load(Ordering::Relaxed),
    }))
}

async fn list_documents(State(s): State<Shared>) -> Json<serde_json::Value> {
    s.requests.fetch_add(1, Ordering::Relaxed);
    let docs: Vec<DocumentSummary> = s
        .store
        .docs
        .values()
        .map(|d| DocumentSummary {
            doc_id: d.doc_id.clone(),
            page_width: d.page_width,
            page_height: d.page_height,
            word_count: d.words.len(),
            has_image: s.store.images.contains_key(&d.doc_id),
        })
        .collect();
    Json(json!({ "schema_version": SCHEMA_VERSION, "documents": docs }))
}

async fn get_document(
    State(s): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<DocumentDetail>, ApiError> {
    s.requests.fetch_add(1, Ordering::Relaxed);
    let doc = s.store.docs.get(&id).ok_or_else(|| not_found(&id))?;
    let image = s
        .store
        .images
        .contains_key(&id)
        .then(|| format!("/api/documents/{id}/image"));
    Ok(Json(DocumentDetail::new(doc, image)))
}

async fn get_image(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    s.requests.fetch_add(1, Ordering::Relaxed);
    if !s.store.docs.contains_key(&id) {
        return Err(not_found(&id));
    }
    let path = s.store.images.get(&id).ok_or_else(|| {
        ApiError(
            StatusCode::NOT_FOUND,
            format!("document {id:?} has no image"),
        )
    })?;
    let bytes = tokio::fs::read(path)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn retrieve(
    State(s): State<Shared>,
    Json(req): Json<RetrieveRequest>,
) -> Result<Response, ApiError> {
    s.requests.fetch_add(1, Ordering::Relaxed);
    if !s.store.docs.contains_key(&req.doc_id) {
        return Err(not_found(&req.doc_id));
    }
    let state = s.clone();
    let result = tokio::task::spawn_blocking(move || {
        let doc = &state.store.docs[&req.doc_id];
        answer(&state.checkpoint, doc, &req.query, req.top_k)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match result {
        Ok(resp) => Ok(Json(resp).into_response()),
        Err(e @ RetrieveError::NoCandidates(_)) => {
            Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
        }
        Err(e) => Err(ApiError(StatusCode::BAD_REQUEST, e.to_string())),
    }
}

pub fn router(state: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/documents", get(list_documents))
        .route("/api/documents/{id}", get(get_document))
        .route("/api/documents/{id}/image", get(get_image))
        .route("/api/retrieve", post(retrieve))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until ctrl-c or SIGTERM.
pub async fn serve(addr: SocketAddr, state: ServeState, static_dir: Option<PathBuf>) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    serve_on(listener, state, static_dir, shutdown_signal()).await
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    state: ServeState,
    static_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    let app = router(Arc::new(state), static_dir);
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .context("server error")
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    log::info!("shutting down");
}
