//! HTTP routes.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use stainlab_core::eval::Category;

use crate::error::ReviewError;
use crate::study::{CreateSession, Study, SubmitScores};

/// Header carrying the per-session token.
pub const TOKEN_HEADER: &str = "x-session-token";

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let status = match &self {
            ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Conflict(_) => StatusCode::CONFLICT,
            ReviewError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            ReviewError::Core(stainlab_core::Error::InvalidArgument(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ReviewError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ReviewError::Invalid(e.body_text()))
}

fn token(headers: &HeaderMap) -> Option<&str> {
    headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok())
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_session(
    State(study): State<Arc<Study>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let req = body(payload)?;
    Ok((StatusCode::CREATED, Json(study.create_session(&req)?)))
}

async fn get_session(State(study): State<Arc<Study>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    Ok(Json(study.session(&id, token(&headers))?))
}

async fn next_pair(State(study): State<Arc<Study>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    Ok(Json(study.next(&id, token(&headers))?))
}

async fn submit_scores(
    State(study): State<Arc<Study>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    payload: Result<Json<SubmitScores>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let req = body(payload)?;
    Ok(Json(study.submit(&id, token(&headers), &req)?))
}

#[derive(Debug, Deserialize)]
struct ConsensusQuery {
    category: String,
}

async fn consensus(
    State(study): State<Arc<Study>>,
    query: Result<Query<ConsensusQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query.map_err(|e| ReviewError::Invalid(e.body_text()))?;
    let category: Category = q.category.parse().map_err(|e: stainlab_core::Error| ReviewError::Invalid(e.to_string()))?;
    Ok(Json(study.consensus(category)?))
}

async fn export(State(study): State<Arc<Study>>) -> ApiResult<impl IntoResponse> {
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], study.export()?))
}

async fn image(State(study): State<Arc<Study>>, Path(name): Path<String>) -> ApiResult<impl IntoResponse> {
    let bytes = study.image(&name)?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    ))
}

pub fn router(study: Arc<Study>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next", get(next_pair))
        .route("/sessions/{id}/scores", post(submit_scores))
        .route("/reports/consensus", get(consensus))
        .route("/export", get(export))
        .route("/images/{name}", get(image))
        .with_state(study)
}

/// Serve until Ctrl-C.
pub async fn serve(study: Arc<Study>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(study))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
