mod common;

use std::sync::Arc;

use common::*;
use nes_core::model_io::{BackendConfig, HttpBackend, ScriptedBackend};
use nes_service::{http, mock_server, ServiceConfig, SuggestionService};
use serde_json::{json, Value};
use tokio::runtime::Runtime;

struct Server {
    url: String,
    _runtime: Runtime,
}

fn start(router_of: impl FnOnce(tokio::net::TcpListener) -> tokio::task::JoinHandle<()>) -> Server {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let _guard = runtime.enter();
    router_of(listener);
    Server {
        url,
        _runtime: runtime,
    }
}

fn api(service: SuggestionService) -> Server {
    let service = Arc::new(service);
    start(move |listener| {
        tokio::spawn(async move {
            http::serve(listener, service, std::future::pending())
                .await
                .unwrap();
        })
    })
}

fn mock(table: ScriptedBackend) -> Server {
    let table = Arc::new(table);
    start(move |listener| {
        tokio::spawn(async move {
            mock_server::serve(listener, table, std::future::pending())
                .await
                .unwrap();
        })
    })
}

fn call(method: &str, url: &str, body: Option<Value>) -> (u16, Value) {
    let request = ureq::request(method, url);
    let result = match body {
        Some(body) => request.send_json(body),
        None => request.call(),
    };
    let response = match result {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("transport error: {e}"),
    };
    let status = response.status();
    (status, response.into_json().unwrap_or(Value::Null))
}

fn fallback(answer: &str) -> SuggestionService {
    let mut b = ScriptedBackend::new("fallback");
    b.set_fallback(answer);
    service(Arc::new(b))
}

#[test]
fn session_lifecycle_and_errors() {
    let server = api(fallback("LINE 2"));
    let base = &server.url;

    let (status, health) = call("GET", &format!("{base}/healthz"), None);
    assert_eq!((status, health["status"].as_str()), (200, Some("ok")));

    let (status, info) = call(
        "POST",
        &format!("{base}/v1/sessions"),
        Some(json!({"text": "a\nb\nc\n", "history_window": 2})),
    );
    assert_eq!(status, 201);
    assert_eq!(info["history_window"], 2);
    let id = info["session_id"].as_str().unwrap().to_owned();
    let session = format!("{base}/v1/sessions/{id}");

    let (status, summary) = call(
        "POST",
        &format!("{session}/events"),
        Some(json!({"post": "a\nB\nc\n"})),
    );
    assert_eq!(status, 200);
    assert_eq!(summary["active_present"], true);

    let (status, err) = call(
        "POST",
        &format!("{session}/events"),
        Some(json!({"pre": "zzz", "post": "a"})),
    );
    assert_eq!(
        (status, err["code"].as_str()),
        (409, Some("stream_discontinuity"))
    );

    let (status, s) = call("POST", &format!("{session}/suggest/location"), None);
    assert_eq!(status, 200);
    assert_eq!(s["kind"], "location");
    let sid = s["suggestion_id"].as_str().unwrap().to_owned();

    let (status, err) = call(
        "POST",
        &format!("{session}/accept"),
        Some(json!({"suggestion_id": "other"})),
    );
    assert_eq!((status, err["code"].as_str()), (409, Some("no_pending")));

    let (status, accepted) = call(
        "POST",
        &format!("{session}/accept"),
        Some(json!({"suggestion_id": sid})),
    );
    assert_eq!(status, 200);
    assert_eq!(accepted["jump_target"], 2);

    let (status, err) = call(
        "POST",
        &format!("{session}/suggest/edit"),
        Some(json!({"line": 1_000_000})),
    );
    assert_eq!(
        (status, err["code"].as_str()),
        (400, Some("line_out_of_range"))
    );

    let (status, err) = call("POST", &format!("{session}/suggest/edit"), Some(json!({})));
    assert_eq!(
        (status, err["code"].as_str()),
        (400, Some("invalid_request"))
    );

    let (status, state) = call("GET", &format!("{session}/state"), None);
    assert_eq!(status, 200);
    assert_eq!(state["text"], "a\nB\nc\n");
    assert_eq!(state["jumps"], json!([2]));

    let (status, err) = call("GET", &format!("{base}/v1/sessions/missing/state"), None);
    assert_eq!(
        (status, err["code"].as_str()),
        (404, Some("unknown_session"))
    );
}

#[test]
fn capacity_maps_to_503() {
    let mut b = ScriptedBackend::new("x");
    b.set_fallback("KEEP");
    let b = Arc::new(b);
    let cfg = ServiceConfig {
        max_sessions: 1,
        ..Default::default()
    };
    let server = api(SuggestionService::new(cfg, b.clone(), b).unwrap());
    let url = format!("{}/v1/sessions", server.url);
    assert_eq!(call("POST", &url, None).0, 201);
    let (status, err) = call("POST", &url, None);
    assert_eq!(
        (status, err["code"].as_str()),
        (503, Some("capacity_exceeded"))
    );
}

#[test]
fn mock_backend_misses_are_404() {
    let server = mock(ScriptedBackend::new("empty"));
    let (status, body) = call(
        "POST",
        &format!("{}/v1/chat/completions", server.url),
        Some(json!({"model": "m", "messages": [{"role": "user", "content": "hi"}]})),
    );
    assert_eq!(status, 404);
    assert!(body["error"]["message"]
        .as_str()
        .unwrap()
        .contains("no scripted response"));
}

#[test]
fn backend_miss_surfaces_as_502() {
    let backend = mock(ScriptedBackend::new("empty"));
    let http_backend = Arc::new(HttpBackend::new(BackendConfig::http(format!(
        "{}/v1",
        backend.url
    ))));
    let server = api(service(http_backend));
    let (_, info) = call(
        "POST",
        &format!("{}/v1/sessions", server.url),
        Some(json!({"text": "a\n"})),
    );
    let id = info["session_id"].as_str().unwrap();
    let (status, err) = call(
        "POST",
        &format!("{}/v1/sessions/{id}/suggest/location", server.url),
        None,
    );
    assert_eq!((status, err["code"].as_str()), (502, Some("backend_error")));
}

#[test]
fn scenario_over_http_backend() {
    let backend = mock(scenario_table());
    let http_backend = Arc::new(HttpBackend::new(BackendConfig::http(format!(
        "{}/v1",
        backend.url
    ))));
    let service = service(http_backend);
    let id = seeded_session(&service);
    run_rounds(&service, &id);
    assert_eq!(service.state(&id).unwrap().text, scenario_states()[4]);
}

#[test]
fn scenario_over_both_http_layers() {
    let backend = mock(scenario_table());
    let http_backend = Arc::new(HttpBackend::new(BackendConfig::http(format!(
        "{}/v1",
        backend.url
    ))));
    let server = api(service(http_backend));
    let base = &server.url;
    let states = scenario_states();

    let (_, info) = call(
        "POST",
        &format!("{base}/v1/sessions"),
        Some(json!({"text": states[0], "language": "TypeScript"})),
    );
    let session = format!(
        "{base}/v1/sessions/{}",
        info["session_id"].as_str().unwrap()
    );
    call(
        "POST",
        &format!("{session}/events"),
        Some(json!({"post": states[1], "cursor_line": 5})),
    );
    for target in TARGETS {
        let (status, jump) = call("POST", &format!("{session}/suggest/location"), None);
        assert_eq!(status, 200, "{jump}");
        assert_eq!(jump["location"], json!(target));
        call(
            "POST",
            &format!("{session}/accept"),
            Some(json!({"suggestion_id": jump["suggestion_id"]})),
        );
        let (status, edit) = call(
            "POST",
            &format!("{session}/suggest/edit"),
            Some(json!({"line": target})),
        );
        assert_eq!(status, 200, "{edit}");
        let (status, _) = call(
            "POST",
            &format!("{session}/accept"),
            Some(json!({"suggestion_id": edit["suggestion_id"]})),
        );
        assert_eq!(status, 200);
    }
    let (_, state) = call("GET", &format!("{session}/state"), None);
    assert_eq!(state["text"].as_str().unwrap(), states[4]);
}
