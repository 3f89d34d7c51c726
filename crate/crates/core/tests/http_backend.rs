//! HttpBackend against hand-rolled single-purpose TCP servers.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use nes_core::model_io::{
    build_location_prompt, BackendConfig, BackendError, CompletionBackend, HttpBackend,
    PromptConfig,
};
use nes_core::CodeSnapshot;

/// Reads one HTTP request; returns (headers, body).
fn read_request(stream: &mut TcpStream) -> (String, String) {
    let mut reader = BufReader::new(stream);
    let mut headers = String::new();
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().unwrap();
        }
        headers.push_str(&line);
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    (headers, String::from_utf8(body).unwrap())
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
}

/// Request line and body of each request the server saw.
type Seen = thread::JoinHandle<Vec<(String, String)>>;

/// Serves `responses` in order, one connection each, counting requests.
fn serve(responses: Vec<(&'static str, String)>) -> (String, Arc<AtomicUsize>, Seen) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let count = Arc::new(AtomicUsize::new(0));
    let counter = count.clone();
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            counter.fetch_add(1, Ordering::SeqCst);
            seen.push(read_request(&mut stream));
            respond(&mut stream, status, &body);
        }
        seen
    });
    (url, count, handle)
}

fn prompt() -> nes_core::model_io::PromptBundle {
    build_location_prompt(&CodeSnapshot::new("a\nb"), &[], &PromptConfig::default()).unwrap()
}

fn backend(url: &str, timeout_ms: u64) -> HttpBackend {
    HttpBackend::new(BackendConfig {
        timeout_ms,
        auth: Some("secret".into()),
        model_name: "nes-test".into(),
        ..BackendConfig::http(url)
    })
}

#[test]
fn successful_completion() {
    let reply =
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "LINE 2"}}]});
    let (url, count, handle) = serve(vec![("200 OK", reply.to_string())]);
    let completion = backend(&url, 5000).complete(&prompt()).unwrap();
    assert_eq!(completion.text, "LINE 2");
    let seen = handle.join().unwrap();
    assert_eq!(count.load(Ordering::SeqCst), 1);
    let (headers, body) = &seen[0];
    assert!(headers.starts_with("POST /v1/chat/completions"));
    assert!(headers
        .to_ascii_lowercase()
        .contains("authorization: bearer secret"));
    let body: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!(body["model"], "nes-test");
    assert_eq!(body["temperature"], 0);
    assert_eq!(body["stream"], false);
    assert_eq!(body["messages"][1]["content"], prompt().user);
}

#[test]
fn http_error_is_not_retried() {
    let (url, count, handle) = serve(vec![("401 Unauthorized", "{\"error\":\"bad key\"}".into())]);
    let err = backend(&url, 5000).complete(&prompt()).unwrap_err();
    assert!(
        matches!(err, BackendError::Http { status: 401, .. }),
        "{err:?}"
    );
    handle.join().unwrap();
    assert_eq!(count.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_body_is_protocol_error() {
    let (url, _, handle) = serve(vec![("200 OK", "{\"choices\": []}".into())]);
    let err = backend(&url, 5000).complete(&prompt()).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err:?}");
    handle.join().unwrap();
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    // Accept and hold the connection without answering.
    let holder = thread::spawn(move || {
        let conn = listener.accept().unwrap();
        thread::sleep(Duration::from_millis(1500));
        drop(conn);
    });
    let started = Instant::now();
    let err = backend(&url, 300).complete(&prompt()).unwrap_err();
    assert!(
        matches!(err, BackendError::Timeout { after_ms: 300 }),
        "{err:?}"
    );
    assert!(started.elapsed() < Duration::from_millis(1400));
    holder.join().unwrap();
}

#[test]
fn refused_connection_is_unreachable() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let err = backend(&format!("http://127.0.0.1:{port}/v1"), 2000)
        .complete(&prompt())
        .unwrap_err();
    assert!(matches!(err, BackendError::Unreachable(_)), "{err:?}");
}
