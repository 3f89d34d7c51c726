//! An OpenAI-compatible chat-completion endpoint that answers from a
//! scripted table, for demos and end-to-end tests without a model.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nes_core::model_io::{prompt_digest, ScriptedBackend};
use serde_json::{json, Value};

fn error(status: StatusCode, message: String) -> Response {
    (status, Json(json!({"error": {"message": message}}))).into_response()
}

fn message_content(body: &Value, role: &str) -> Option<String> {
    body.get("messages")?
        .as_array()?
        .iter()
        .find(|m| m.get("role").and_then(Value::as_str) == Some(role))?
        .get("content")?
        .as_str()
        .map(str::to_owned)
}

async fn chat_completions(State(table): State<Arc<ScriptedBackend>>, body: Bytes) -> Response {
    let body: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("bad JSON: {e}")),
    };
    let system = message_content(&body, "system").unwrap_or_default();
    let Some(user) = message_content(&body, "user") else {
        return error(StatusCode::BAD_REQUEST, "no user message".to_owned());
    };
    let digest = prompt_digest(&system, &user);
    let Some(entry) = table.lookup(&digest) else {
        log::warn!("mock backend: no scripted response for {digest}");
        return error(
            StatusCode::NOT_FOUND,
            format!("no scripted response for prompt {digest}"),
        );
    };
    if entry.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(entry.delay_ms)).await;
    }
    let model = body.get("model").cloned().unwrap_or(Value::Null);
    Json(json!({
        "id": format!("mock-{}", &digest[..12]),
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": entry.response},
            "finish_reason": "stop",
        }],
    }))
    .into_response()
}

pub fn router(table: Arc<ScriptedBackend>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/chat/completions", post(chat_completions))
        .route("/chat/completions", post(chat_completions))
        .with_state(table)
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    table: Arc<ScriptedBackend>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(table))
        .with_graceful_shutdown(shutdown)
        .await
}
