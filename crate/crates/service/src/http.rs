//! JSON-over-HTTP front end for [`SuggestionService`].
//!
//! Service calls are blocking (they may wait on the model backend), so every
//! handler runs them on the blocking thread pool.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{CreateSession, EventRequest, ServiceError, SuggestionService};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Deserialize)]
struct EditRequest {
    line: usize,
}

#[derive(Debug, Deserialize)]
struct SuggestionRef {
    suggestion_id: String,
}

pub fn status_for(err: &ServiceError) -> StatusCode {
    match err {
        ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
        ServiceError::CapacityExceeded { .. } => StatusCode::SERVICE_UNAVAILABLE,
        ServiceError::StreamDiscontinuity
        | ServiceError::StaleSuggestion
        | ServiceError::NoPending => StatusCode::CONFLICT,
        ServiceError::LineOutOfRange { .. } | ServiceError::InvalidRequest(_) => {
            StatusCode::BAD_REQUEST
        }
        ServiceError::Backend(nes_core::model_io::BackendError::Timeout { .. }) => {
            StatusCode::GATEWAY_TIMEOUT
        }
        ServiceError::Backend(_) => StatusCode::BAD_GATEWAY,
        ServiceError::Prompt(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ServiceError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

struct ApiError(ServiceError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.0.code().to_owned(),
            message: self.0.to_string(),
        };
        (status_for(&self.0), Json(body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(err: ServiceError) -> Self {
        ApiError(err)
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    parse_required(body)
}

fn parse_required<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError(ServiceError::InvalidRequest(format!("bad JSON body: {e}"))))
}

async fn blocking<T, F>(service: Arc<SuggestionService>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&SuggestionService) -> Result<T, ServiceError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&service)).await {
        Ok(result) => result.map(Json).map_err(ApiError),
        Err(join) => Err(ApiError(ServiceError::InvalidRequest(format!(
            "request handler failed: {join}"
        )))),
    }
}

async fn healthz(State(service): State<Arc<SuggestionService>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "sessions": service.session_count()}))
}

async fn create_session(
    State(service): State<Arc<SuggestionService>>,
    body: Bytes,
) -> Result<(StatusCode, Json<crate::SessionInfo>), ApiError> {
    let request: CreateSession = parse_body(&body)?;
    let info = blocking(service, move |s| s.create_session(request)).await?;
    Ok((StatusCode::CREATED, info))
}

async fn push_event(
    State(service): State<Arc<SuggestionService>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<crate::HistorySummary> {
    let event: EventRequest = parse_required(&body)?;
    blocking(service, move |s| s.push_event(&id, event)).await
}

async fn suggest_location(
    State(service): State<Arc<SuggestionService>>,
    Path(id): Path<String>,
) -> ApiResult<crate::Suggestion> {
    blocking(service, move |s| s.suggest_location(&id)).await
}

async fn suggest_edit(
    State(service): State<Arc<SuggestionService>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<crate::Suggestion> {
    let request: EditRequest = parse_required(&body)?;
    blocking(service, move |s| s.suggest_edit(&id, request.line)).await
}

async fn accept(
    State(service): State<Arc<SuggestionService>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<crate::AcceptSummary> {
    let request: SuggestionRef = parse_required(&body)?;
    blocking(service, move |s| s.accept(&id, &request.suggestion_id)).await
}

async fn reject(
    State(service): State<Arc<SuggestionService>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<serde_json::Value> {
    let request: SuggestionRef = parse_required(&body)?;
    blocking(service, move |s| {
        s.reject(&id, &request.suggestion_id)
            .map(|()| json!({"rejected": true}))
    })
    .await
}

async fn session_state(
    State(service): State<Arc<SuggestionService>>,
    Path(id): Path<String>,
) -> ApiResult<crate::SessionState> {
    blocking(service, move |s| s.state(&id)).await
}

pub fn router(service: Arc<SuggestionService>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/events", post(push_event))
        .route("/v1/sessions/{id}/suggest/location", post(suggest_location))
        .route("/v1/sessions/{id}/suggest/edit", post(suggest_edit))
        .route("/v1/sessions/{id}/accept", post(accept))
        .route("/v1/sessions/{id}/reject", post(reject))
        .route("/v1/sessions/{id}/state", get(session_state))
        .with_state(service)
}

/// Serves until the listener fails or `shutdown` resolves, evicting idle
/// sessions once a minute.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<SuggestionService>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = {
        let service = service.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            loop {
                tick.tick().await;
                service.evict_expired();
            }
        })
    };
    let result = axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await;
    sweeper.abort();
    result
}
