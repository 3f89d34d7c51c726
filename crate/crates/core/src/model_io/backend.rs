//! Chat-completion backends: a blocking HTTP client for OpenAI-compatible
//! servers and a scripted mock that replays canned responses by prompt hash.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::prompt::PromptBundle;
use super::ModelIoError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend timed out after {after_ms} ms")]
    Timeout { after_ms: u64 },
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("no scripted response for prompt {digest}")]
    NoScriptedResponse { digest: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Wall-clock time around the backend call.
    pub latency_ms: f64,
}

pub trait CompletionBackend: Send + Sync {
    /// Short identifier echoed in reports.
    fn id(&self) -> String;

    fn complete(&self, prompt: &PromptBundle) -> Result<Completion, BackendError>;
}

/// Runs one non-streaming completion.
pub fn complete(
    backend: &dyn CompletionBackend,
    prompt: &PromptBundle,
) -> Result<Completion, BackendError> {
    backend.complete(prompt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    #[default]
    Http,
    ScriptedMock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub mode: BackendMode,
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model_name: String,
    pub timeout_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auth: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_table: Option<PathBuf>,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: BackendMode::Http,
            endpoint: "http://127.0.0.1:8000/v1".to_owned(),
            model_name: "nes".to_owned(),
            timeout_ms: 10_000,
            auth: None,
            mock_table: None,
            max_in_flight: 8,
        }
    }
}

impl BackendConfig {
    pub fn scripted(table: impl Into<PathBuf>) -> Self {
        BackendConfig {
            mode: BackendMode::ScriptedMock,
            mock_table: Some(table.into()),
            ..Default::default()
        }
    }

    pub fn http(endpoint: impl Into<String>) -> Self {
        BackendConfig {
            endpoint: endpoint.into(),
            ..Default::default()
        }
    }

    pub fn build(&self) -> Result<Arc<dyn CompletionBackend>, ModelIoError> {
        if self.timeout_ms == 0 {
            return Err(ModelIoError::Config(
                "timeout_ms must be positive".to_owned(),
            ));
        }
        match self.mode {
            BackendMode::Http => Ok(Arc::new(HttpBackend::new(self.clone()))),
            BackendMode::ScriptedMock => {
                let path = self.mock_table.as_ref().ok_or_else(|| {
                    ModelIoError::Config("scripted_mock mode needs a mock table".to_owned())
                })?;
                Ok(Arc::new(ScriptedBackend::load(path)?))
            }
        }
    }
}

/// Counting semaphore capping concurrent requests.
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight {
            limit: limit.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Self {
        let timeout = Duration::from_millis(config.timeout_ms);
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(timeout)
            .timeout(timeout)
            .build();
        HttpBackend {
            in_flight: InFlight::new(config.max_in_flight),
            config,
            agent,
        }
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        )
    }

    fn send(&self, body: &serde_json::Value) -> Result<String, BackendError> {
        let started = Instant::now();
        let mut request = self.agent.post(&self.url());
        if let Some(token) = &self.config.auth {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        match request.send_json(body) {
            Ok(response) => {
                let value: serde_json::Value = response
                    .into_json()
                    .map_err(|e| self.classify_io(e, started))?;
                extract_content(&value)
            }
            Err(ureq::Error::Status(status, response)) => {
                let body = response.into_string().unwrap_or_default();
                Err(BackendError::Http {
                    status,
                    body: body.chars().take(200).collect(),
                })
            }
            Err(ureq::Error::Transport(transport)) => {
                let message = transport.to_string();
                if is_timeout(&message) || started.elapsed() >= self.timeout() {
                    Err(BackendError::Timeout {
                        after_ms: self.config.timeout_ms,
                    })
                } else {
                    Err(BackendError::Unreachable(message))
                }
            }
        }
    }

    fn classify_io(&self, err: std::io::Error, started: Instant) -> BackendError {
        if is_timeout(&err.to_string()) || started.elapsed() >= self.timeout() {
            BackendError::Timeout {
                after_ms: self.config.timeout_ms,
            }
        } else {
            BackendError::Protocol(err.to_string())
        }
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.config.timeout_ms)
    }
}

fn is_timeout(message: &str) -> bool {
    let lower = message.to_ascii_lowercase();
    lower.contains("timed out") || lower.contains("timeout")
}

fn extract_content(value: &serde_json::Value) -> Result<String, BackendError> {
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_owned)
        .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".to_owned()))
}

/// Request body for an OpenAI-compatible chat-completion endpoint, greedy
/// decoding, no streaming.
pub fn chat_request_body(model: &str, prompt: &PromptBundle) -> serde_json::Value {
    json!({
        "model": model,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
        "temperature": 0,
        "stream": false,
    })
}

impl CompletionBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.model_name)
    }

    fn complete(&self, prompt: &PromptBundle) -> Result<Completion, BackendError> {
        let _slot = self.in_flight.acquire();
        let body = chat_request_body(&self.config.model_name, prompt);
        let started = Instant::now();
        let result = match self.send(&body) {
            // One retry, and only when the connection itself failed.
            Err(BackendError::Unreachable(first)) => {
                log::info!("backend transport error, retrying once: {first}");
                self.send(&body)
            }
            other => other,
        };
        result.map(|text| Completion {
            text,
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
        })
    }
}

/// One row of a scripted mock table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    /// Prompt digest, or `*` for the fallback answer.
    pub prompt_sha256: String,
    pub response: String,
    #[serde(default)]
    pub delay_ms: u64,
}

pub const FALLBACK_KEY: &str = "*";

/// Deterministic backend answering from a digest-keyed table.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    name: String,
    table: HashMap<String, ScriptedResponse>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>) -> Self {
        ScriptedBackend {
            name: name.into(),
            table: HashMap::new(),
        }
    }

    pub fn from_entries(name: impl Into<String>, entries: Vec<ScriptedResponse>) -> Self {
        let mut backend = ScriptedBackend::new(name);
        for entry in entries {
            backend.table.insert(entry.prompt_sha256.clone(), entry);
        }
        backend
    }

    pub fn load(path: &Path) -> Result<Self, ModelIoError> {
        let file = std::fs::File::open(path)?;
        let entries = read_table(std::io::BufReader::new(file))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "table".to_owned());
        Ok(ScriptedBackend::from_entries(name, entries))
    }

    pub fn insert(&mut self, prompt: &PromptBundle, response: impl Into<String>) {
        self.insert_digest(prompt.digest(), response, 0);
    }

    pub fn insert_digest(&mut self, digest: String, response: impl Into<String>, delay_ms: u64) {
        self.table.insert(
            digest.clone(),
            ScriptedResponse {
                prompt_sha256: digest,
                response: response.into(),
                delay_ms,
            },
        );
    }

    pub fn set_fallback(&mut self, response: impl Into<String>) {
        self.insert_digest(FALLBACK_KEY.to_owned(), response, 0);
    }

    /// Sets the same artificial delay on every entry.
    pub fn with_delay(mut self, delay_ms: u64) -> Self {
        for entry in self.table.values_mut() {
            entry.delay_ms = delay_ms;
        }
        self
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn lookup(&self, digest: &str) -> Option<&ScriptedResponse> {
        self.table
            .get(digest)
            .or_else(|| self.table.get(FALLBACK_KEY))
    }

    /// Entries sorted by digest, for stable table files.
    pub fn entries(&self) -> Vec<&ScriptedResponse> {
        let mut entries: Vec<_> = self.table.values().collect();
        entries.sort_by(|a, b| a.prompt_sha256.cmp(&b.prompt_sha256));
        entries
    }

    pub fn write_table(&self, mut writer: impl Write) -> std::io::Result<()> {
        for entry in self.entries() {
            serde_json::to_writer(&mut writer, entry)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Answers prompts from a queue, in order, and records which prompt got
/// which answer. Running a session once against it yields a digest-keyed
/// table that a [`ScriptedBackend`] can replay.
#[derive(Debug, Default)]
pub struct QueueBackend {
    name: String,
    queue: Mutex<std::collections::VecDeque<String>>,
    recorded: Mutex<Vec<ScriptedResponse>>,
}

impl QueueBackend {
    pub fn new(name: impl Into<String>, responses: impl IntoIterator<Item = String>) -> Self {
        QueueBackend {
            name: name.into(),
            queue: Mutex::new(responses.into_iter().collect()),
            recorded: Mutex::new(Vec::new()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("queue lock").len()
    }

    /// The answers given so far, as a scripted table.
    pub fn recorded(&self) -> ScriptedBackend {
        let entries = self.recorded.lock().expect("record lock").clone();
        ScriptedBackend::from_entries(self.name.clone(), entries)
    }
}

impl CompletionBackend for QueueBackend {
    fn id(&self) -> String {
        format!("queue:{}", self.name)
    }

    fn complete(&self, prompt: &PromptBundle) -> Result<Completion, BackendError> {
        let digest = prompt.digest();
        let text = self
            .queue
            .lock()
            .expect("queue lock")
            .pop_front()
            .ok_or_else(|| BackendError::NoScriptedResponse {
                digest: digest.clone(),
            })?;
        self.recorded
            .lock()
            .expect("record lock")
            .push(ScriptedResponse {
                prompt_sha256: digest,
                response: text.clone(),
                delay_ms: 0,
            });
        Ok(Completion {
            text,
            latency_ms: 0.0,
        })
    }
}

pub fn read_table(reader: impl BufRead) -> Result<Vec<ScriptedResponse>, ModelIoError> {
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| ModelIoError::Table {
            line: idx + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

impl CompletionBackend for ScriptedBackend {
    fn id(&self) -> String {
        format!("scripted:{}", self.name)
    }

    fn complete(&self, prompt: &PromptBundle) -> Result<Completion, BackendError> {
        let started = Instant::now();
        let digest = prompt.digest();
        let entry = self
            .lookup(&digest)
            .ok_or(BackendError::NoScriptedResponse { digest })?;
        if entry.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(entry.delay_ms));
        }
        Ok(Completion {
            text: entry.response.clone(),
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
        })
    }
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, prompt: &PromptBundle) -> Result<Completion, BackendError> {
        (**self).complete(prompt)
    }
}
