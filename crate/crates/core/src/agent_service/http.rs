use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ServiceError, SessionService};
use crate::planner::ProfileSpec;

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    kind: String,
    message: String,
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match e {
            ServiceError::UnknownSession(_) | ServiceError::UnknownTrack(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidProfile(_) | ServiceError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Journal { .. } | ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error_kind": self.kind, "message": self.message});
        (self.status, Json(body)).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        kind: "invalid_json".into(),
        message: e.to_string(),
    })
}

/// Planning may block on an HTTP chat provider, so service calls leave
/// the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal".into(),
            message: e.to_string(),
        }),
    }
}

#[derive(Deserialize)]
struct CreateBody {
    #[serde(default)]
    profile: ProfileSpec,
    #[serde(default)]
    final_k: Option<usize>,
}

#[derive(Serialize)]
struct Created {
    session_id: String,
}

#[derive(Deserialize)]
struct MessageBody {
    query: String,
}

type Shared = State<Arc<SessionService>>;

async fn create_session(State(svc): Shared, body: Bytes) -> Result<Response, ApiError> {
    let body: CreateBody = if body.is_empty() {
        CreateBody {
            profile: ProfileSpec::default(),
            final_k: None,
        }
    } else {
        parse_body(&body)?
    };
    let session_id = blocking(move || svc.create_session(&body.profile, body.final_k)).await?;
    Ok((StatusCode::CREATED, Json(Created { session_id })).into_response())
}

async fn post_message(State(svc): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let body: MessageBody = parse_body(&body)?;
    let result = blocking(move || svc.post_message(&id, &body.query)).await?;
    Ok(Json(result).into_response())
}

async fn get_session(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = svc.get_session(&id)?;
    Ok(Json(&*session).into_response())
}

async fn get_track(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(svc.track(&id)?).into_response())
}

async fn get_tool_stats(State(svc): Shared) -> Response {
    Json(svc.tool_stats()).into_response()
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        kind: "not_found".into(),
        message: "no such route".into(),
    }
}

pub fn router(service: Arc<SessionService>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/tracks/{id}", get(get_track))
        .route("/stats/tools", get(get_tool_stats))
        .fallback(not_found)
        .with_state(service)
}

/// Serves until the listener fails. Binds `addr` and logs the bound port.
pub async fn serve(service: Arc<SessionService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
