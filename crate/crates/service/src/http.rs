//! HTTP routes. Every body is JSON; errors are `{error, message, stage?}`.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nbi_core::notebook::serialize_notebook;
use nbi_core::{Decision, Notebook, QueryScope};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::service::{GenerateRequest, Service, ServiceError};

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0.to_json())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(ServiceError::BadRequest(format!("invalid request body: {e}"))))
}

/// Runs blocking engine work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(ServiceError::Internal(format!("worker failed: {e}")))),
    }
}

async fn health(State(s): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(s.health())
}

fn notebook_response(nb: &Notebook) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], serialize_notebook(nb)).into_response()
}

async fn get_notebook(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(notebook_response(&s.get_notebook(&id)?))
}

#[derive(Debug, Deserialize)]
struct PutParams {
    expected_revision: Option<u64>,
}

#[derive(Serialize)]
struct PutResponse {
    revision: u64,
    changes: usize,
}

async fn put_notebook(
    State(s): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(p): Query<PutParams>,
    body: Bytes,
) -> ApiResult<Json<PutResponse>> {
    let nb: Notebook = nbi_core::notebook::parse_notebook(&body)
        .map_err(|e| ApiError(ServiceError::BadRequest(format!("invalid notebook: {e}"))))?;
    let (nb, changes) = blocking(move || s.put_notebook(&id, &nb, p.expected_revision)).await?;
    Ok(Json(PutResponse { revision: nb.revision, changes: changes.len() }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    notebook_id: String,
}

async fn create_session(State(s): State<Arc<Service>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse(&body)?;
    let info = s.create_session(&req.notebook_id)?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AskRequest {
    query: String,
    scope: QueryScope,
}

async fn ask(State(s): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: AskRequest = parse(&body)?;
    let suggestion = blocking(move || s.ask(&id, &req.query, &req.scope)).await?;
    Ok(Json(suggestion).into_response())
}

async fn resolve(State(s): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let decision: Decision = parse(&body)?;
    let out = blocking(move || s.resolve(&id, decision)).await?;
    Ok(Json(out).into_response())
}

async fn session_dag(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.session_dag(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
struct KgQueryParams {
    q: String,
    #[serde(default = "default_task")]
    task: String,
}

fn default_task() -> String {
    "nl2dsl".into()
}

async fn kg_query(State(s): State<Arc<Service>>, Query(p): Query<KgQueryParams>) -> ApiResult<Response> {
    let out = blocking(move || s.kg_query(&p.q, &p.task)).await?;
    Ok(Json(out).into_response())
}

async fn kg_generate(State(s): State<Arc<Service>>, body: Bytes) -> ApiResult<Response> {
    let req: GenerateRequest = parse(&body)?;
    let out = blocking(move || s.kg_generate(&req)).await?;
    Ok(Json(out).into_response())
}

async fn metrics(State(s): State<Arc<Service>>) -> Response {
    Json(s.metrics()).into_response()
}

async fn auth(State(s): State<Arc<Service>>, req: Request, next: Next) -> Response {
    if let Some(token) = s.token() {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok && req.uri().path() != "/health" && req.method() != Method::OPTIONS {
            let body = serde_json::json!({"error": "Unauthorized", "message": "missing or wrong bearer token"});
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(req).await
}

pub fn router(service: Arc<Service>) -> Router {
    let origins: Vec<HeaderValue> = service.config.server.allow_origins.iter().filter_map(|o| o.parse().ok()).collect();
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/notebooks/{id}", get(get_notebook).put(put_notebook))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/ask", post(ask))
        .route("/sessions/{id}/resolve", post(resolve))
        .route("/sessions/{id}/dag", get(session_dag))
        .route("/kg/query", get(kg_query))
        .route("/kg/generate", post(kg_generate))
        .route("/metrics", get(metrics))
        .layer(middleware::from_fn_with_state(service.clone(), auth))
        .with_state(service);
    if !origins.is_empty() {
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST, Method::PUT])
                .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION]),
        );
    }
    app
}

/// Serves until `shutdown` resolves, then flushes the stores.
pub async fn serve(
    service: Arc<Service>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let app = router(service.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ServiceError::Internal(format!("server error: {e}")))?;
    tokio::task::spawn_blocking(move || service.flush())
        .await
        .map_err(|e| ServiceError::Internal(format!("flush failed: {e}")))?
}
