//! HTTP service. Every endpoint takes and returns UTF-8 JSON; failures
//! carry exactly one [`ApiError`] body.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ops::{self, ErrorCode, OpError};
use crate::state::AppState;

pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub request_id: String,
}

fn request_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

fn status_for(err: &OpError) -> StatusCode {
    if err.not_found {
        return StatusCode::NOT_FOUND;
    }
    match err.code {
        ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
        ErrorCode::ProviderUnavailable => StatusCode::BAD_GATEWAY,
        ErrorCode::StoreUnavailable => StatusCode::SERVICE_UNAVAILABLE,
        ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn with_id(mut resp: Response, id: &str) -> Response {
    if let Ok(v) = HeaderValue::from_str(id) {
        resp.headers_mut().insert(REQUEST_ID_HEADER, v);
    }
    resp
}

fn error_response(err: OpError, id: String) -> Response {
    let status = status_for(&err);
    let body = ApiError {
        code: err.code,
        message: err.message,
        request_id: id.clone(),
    };
    with_id((status, Json(body)).into_response(), &id)
}

fn reply<T: Serialize>(result: Result<T, OpError>, id: String) -> Response {
    match result {
        Ok(v) => with_id(Json(v).into_response(), &id),
        Err(e) => error_response(e, id),
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, OpError> {
    serde_json::from_slice(body).map_err(|e| OpError::bad_request(format!("invalid JSON body: {e}")))
}

/// Runs a blocking operation off the async executor.
async fn blocking<T, F>(state: &Arc<AppState>, f: F) -> Result<T, OpError>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, OpError> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .unwrap_or_else(|e| Err(OpError::new(ErrorCode::Internal, format!("worker failed: {e}"))))
}

async fn qa(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let id = request_id();
    let result = match parse::<litkb_core::QaRequest>(&body) {
        Ok(req) => blocking(&state, move |s| ops::answer(s, &req)).await,
        Err(e) => Err(e),
    };
    reply(result, id)
}

async fn research(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let id = request_id();
    let result = match parse::<litkb_core::ResearchRequest>(&body) {
        Ok(req) => blocking(&state, move |s| ops::research(s, &req)).await,
        Err(e) => Err(e),
    };
    reply(result, id)
}

async fn ingest(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let id = request_id();
    let result = match parse::<ops::IngestRequest>(&body) {
        Ok(req) => {
            blocking(&state, move |s| {
                let docs = ops::load_documents(&req)?;
                ops::ingest(s, &docs)
            })
            .await
        }
        Err(e) => Err(e),
    };
    reply(result, id)
}

async fn document(State(state): State<Arc<AppState>>, Path(doc_id): Path<String>) -> Response {
    reply(ops::document(&state, &doc_id), request_id())
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let result = blocking(&state, |s| Ok(ops::health(s))).await;
    reply(result, request_id())
}

async fn no_route() -> Response {
    error_response(OpError::not_found("no such endpoint"), request_id())
}

async fn wrong_method() -> Response {
    let mut resp = error_response(OpError::bad_request("method not allowed"), request_id());
    *resp.status_mut() = StatusCode::METHOD_NOT_ALLOWED;
    resp
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/qa", post(qa))
        .route("/api/research", post(research))
        .route("/api/ingest", post(ingest))
        .route("/api/documents/{doc_id}", get(document))
        .route("/api/health", get(health))
        .fallback(no_route)
        .method_not_allowed_fallback(wrong_method)
        .with_state(state)
}

/// Binds `listen` and serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
