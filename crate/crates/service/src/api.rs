//! HTTP routes.

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use serde_json::Value;
use tower_http::services::ServeDir;

use crate::app::{ApiError, AppState};

type Shared = State<Arc<AppState>>;

const PLACEHOLDER: &str = "<!doctype html><title>personachat</title>\
<p>The browser client is not built. The JSON API is served under <code>/v1</code>.</p>";

fn body(json: Result<Json<Value>, JsonRejection>) -> Result<Value, ApiError> {
    json.map(|Json(v)| v).map_err(|e| ApiError::invalid_request(e.body_text()))
}

async fn list_models(State(app): Shared) -> impl IntoResponse {
    Json(serde_json::json!({ "models": app.models() }))
}

async fn create_session(
    State(app): Shared,
    json: Result<Json<Value>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let v = body(json)?;
    let model_id = v
        .get("model_id")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::invalid_request("model_id must be a string"))?;
    let seed = match v.get("seed") {
        None | Some(Value::Null) => None,
        Some(s) => Some(
            s.as_u64()
                .ok_or_else(|| ApiError::invalid_request("seed must be a non-negative integer"))?,
        ),
    };
    let created = app.create_session(model_id, seed)?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn post_message(
    State(app): Shared,
    Path(id): Path<String>,
    json: Result<Json<Value>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let v = body(json)?;
    let text = v
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::invalid_request("text must be a string"))?;
    Ok(Json(app.post_message(&id, text).await?))
}

async fn get_session(State(app): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(app.view(&id).await?))
}

async fn get_quiz(State(app): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(app.quiz(&id).await?))
}

async fn post_evaluation(
    State(app): Shared,
    Path(id): Path<String>,
    json: Result<Json<Value>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let v = body(json)?;
    Ok(Json(app.evaluate(&id, &v).await?))
}

async fn stats(State(app): Shared) -> impl IntoResponse {
    Json(app.stats().await)
}

async fn unknown_route() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/v1/models", get(list_models))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/sessions/{id}/quiz", get(get_quiz))
        .route("/v1/sessions/{id}/evaluation", post(post_evaluation))
        .route("/v1/stats", get(stats))
        .route("/v1/{*rest}", any(unknown_route));
    let api = match state.static_dir.as_ref().filter(|d| d.is_dir()) {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER) })),
    };
    api.with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
