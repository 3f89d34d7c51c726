use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nes_core::dataset::editable_window;
use nes_core::diff::{diff_lines, join_lines, split_lines, LineRange};
use nes_core::model_io::{
    build_edit_prompt, build_location_prompt, parse_edit_output, parse_location_output,
    CompletionBackend, PromptBundle, PromptConfig,
};
use nes_core::trajectory::{EditEvent, IngestOutcome, TrajectoryError};
use nes_core::{
    apply_diff, render_nes_diff, text_sha256, CodeSnapshot, DeltaScript, HistoryWindow, Location,
    TrajectoryState,
};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::{ServiceConfig, ServiceError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CreateSession {
    pub history_window: Option<usize>,
    pub latency_budget_ms: Option<u64>,
    /// Initial file text. Without it the first event's `pre` text is used.
    pub text: Option<String>,
    pub language: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub history_window: usize,
    pub latency_budget_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRequest {
    /// Text before the edit; defaults to the session's current text.
    #[serde(default)]
    pub pre: Option<String>,
    pub post: String,
    #[serde(default)]
    pub cursor_line: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub history_len: usize,
    pub active_present: bool,
    /// `ignored`, `started`, `merged` or `rotated`.
    pub outcome: String,
    pub text_sha256: String,
    pub pending_stale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuggestionKind {
    Location,
    Edit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub suggestion_id: String,
    pub kind: SuggestionKind,
    /// Location suggestions: a line number or `"keep"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<Location>,
    /// Edit suggestions: first and last line of the editable window.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_start: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_end: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_text: Option<String>,
    /// NES diff of the proposed change in file line numbers; empty when the
    /// suggestion changes nothing.
    pub diff: String,
    pub unchanged: bool,
    /// Backend time plus local processing.
    pub latency_ms: f64,
    pub backend_ms: f64,
    pub local_ms: f64,
    pub over_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptSummary {
    pub kind: SuggestionKind,
    pub applied: bool,
    pub text_sha256: String,
    pub history_len: usize,
    pub active_present: bool,
    pub cursor_line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump_target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub language: String,
    pub history_window: usize,
    pub latency_budget_ms: u64,
    /// Finalized history, oldest first, as NES diffs.
    pub history: Vec<String>,
    pub active: Option<String>,
    pub text: String,
    pub text_sha256: String,
    pub cursor_line: usize,
    pub pending: Option<Suggestion>,
    pub jumps: Vec<usize>,
    pub rejections: usize,
}

struct Pending {
    suggestion: Suggestion,
    /// Region the suggestion depends on, in current file coordinates.
    region: LineRange,
    /// Edit suggestions: the proposed change, in file coordinates.
    delta: Option<DeltaScript>,
    /// Hash of the window text at issuance.
    window_sha256: String,
    stale: bool,
}

struct Session {
    id: String,
    language: String,
    state: TrajectoryState,
    initialized: bool,
    history_window: HistoryWindow,
    latency_budget_ms: u64,
    cursor_line: Option<usize>,
    pending: Option<Pending>,
    jumps: Vec<usize>,
    rejections: usize,
    last_seen: Instant,
}

impl Session {
    fn snapshot(&self) -> CodeSnapshot {
        CodeSnapshot {
            text: self.state.current_text().to_owned(),
            cursor_line: self.cursor_line,
            language: self.language.clone(),
        }
    }

    /// Rendered history with the active delta as the most recent entry.
    fn rendered_history(&self) -> Vec<String> {
        let recent = self.state.recent_deltas();
        self.history_window
            .apply(&recent)
            .iter()
            .map(|d| render_nes_diff(d))
            .collect()
    }

    fn prompt_config(&self, budget_bytes: usize) -> PromptConfig {
        PromptConfig {
            history_window: self.history_window,
            budget_bytes,
        }
    }

    fn summary(&self, outcome: &str) -> HistorySummary {
        HistorySummary {
            history_len: self.state.history().len(),
            active_present: self.state.active().is_some(),
            outcome: outcome.to_owned(),
            text_sha256: text_sha256(self.state.current_text()),
            pending_stale: self.pending.as_ref().is_some_and(|p| p.stale),
        }
    }

    /// Invalidates or re-anchors the pending suggestion after `delta`.
    fn track_pending(&mut self, delta: &DeltaScript) {
        let Some(pending) = self.pending.as_mut() else {
            return;
        };
        if pending.region.distance(&delta.pre_range) <= 0 {
            pending.stale = true;
        } else if delta.pre_range.end < pending.region.start {
            let shift = delta.line_delta();
            let moved = |n: usize| n.checked_add_signed(shift).unwrap_or(1).max(1);
            pending.region = LineRange::new(moved(pending.region.start), moved(pending.region.end));
            if let Some(d) = pending.delta.take() {
                pending.delta = match shift {
                    s if s >= 0 => Some(d.shifted(s as usize)),
                    // Moving a delta up is rare enough to simply re-issue.
                    _ => {
                        pending.stale = true;
                        None
                    }
                };
            }
        }
    }

    fn ingest(&mut self, event: &EditEvent) -> Result<IngestOutcome, ServiceError> {
        let delta = nes_core::compute_diff(&event.pre.text, &event.post.text);
        let outcome = self.state.ingest_event(event).map_err(|e| match e {
            TrajectoryError::StreamDiscontinuity => ServiceError::StreamDiscontinuity,
            other => ServiceError::InvalidRequest(other.to_string()),
        })?;
        if outcome != IngestOutcome::Ignored {
            self.track_pending(&delta);
            if event.post.cursor_line.is_none() {
                self.cursor_line = Some(delta.post_range.end.max(delta.post_range.start));
            }
        }
        if let Some(line) = event.post.cursor_line {
            self.cursor_line = Some(line);
        }
        Ok(outcome)
    }
}

fn outcome_name(outcome: IngestOutcome) -> &'static str {
    match outcome {
        IngestOutcome::Ignored => "ignored",
        IngestOutcome::Started => "started",
        IngestOutcome::Merged => "merged",
        IngestOutcome::Rotated => "rotated",
    }
}

fn window_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        Vec::new()
    } else {
        text.split('\n').collect()
    }
}

/// The session store plus the two model backends.
///
/// Operations on one session are serialized by its mutex, including the
/// backend call; different sessions proceed in parallel.
pub struct SuggestionService {
    config: ServiceConfig,
    location_backend: Arc<dyn CompletionBackend>,
    edit_backend: Arc<dyn CompletionBackend>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SuggestionService {
    pub fn new(
        config: ServiceConfig,
        location_backend: Arc<dyn CompletionBackend>,
        edit_backend: Arc<dyn CompletionBackend>,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        Ok(SuggestionService {
            config,
            location_backend,
            edit_backend,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    /// Builds both backends from the configuration.
    pub fn from_config(config: ServiceConfig) -> Result<Self, ServiceError> {
        let build = |b: &nes_core::model_io::BackendConfig| {
            b.build().map_err(|e| ServiceError::Config(e.to_string()))
        };
        let location = build(&config.location_backend)?;
        let edit = build(&config.edit_backend)?;
        Self::new(config, location, edit)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().len()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_owned()))
    }

    fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let session = self.session(id)?;
        let mut guard = session.lock();
        let now = Instant::now();
        if now > guard.last_seen {
            guard.last_seen = now;
        }
        f(&mut guard)
    }

    /// Drops sessions idle for longer than the TTL; returns how many.
    pub fn evict_expired(&self) -> usize {
        let ttl = Duration::from_secs(self.config.session_ttl_secs);
        self.evict_idle_longer_than(ttl)
    }

    pub fn evict_idle_longer_than(&self, ttl: Duration) -> usize {
        let now = Instant::now();
        let mut sessions = self.sessions.write();
        let before = sessions.len();
        sessions.retain(|_, s| match s.try_lock() {
            Some(s) => now.duration_since(s.last_seen) <= ttl,
            // Busy sessions are in use, hence not idle.
            None => true,
        });
        let evicted = before - sessions.len();
        if evicted > 0 {
            log::info!("evicted {evicted} idle sessions");
        }
        evicted
    }

    pub fn create_session(&self, request: CreateSession) -> Result<SessionInfo, ServiceError> {
        let k = request.history_window.unwrap_or(self.config.history_window);
        let history_window =
            HistoryWindow::new(k).map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
        let latency_budget_ms = request
            .latency_budget_ms
            .unwrap_or(self.config.latency_budget_ms);
        if latency_budget_ms == 0 {
            return Err(ServiceError::InvalidRequest(
                "latency_budget_ms must be positive".into(),
            ));
        }
        self.evict_expired();

        let id = uuid::Uuid::new_v4().simple().to_string();
        let initialized = request.text.is_some();
        let session = Session {
            id: id.clone(),
            language: request.language.unwrap_or_default(),
            state: TrajectoryState::new(request.text.unwrap_or_default()),
            initialized,
            history_window,
            latency_budget_ms,
            cursor_line: None,
            pending: None,
            jumps: Vec::new(),
            rejections: 0,
            last_seen: Instant::now(),
        };
        let mut sessions = self.sessions.write();
        if sessions.len() >= self.config.max_sessions {
            return Err(ServiceError::CapacityExceeded {
                max: self.config.max_sessions,
            });
        }
        sessions.insert(id.clone(), Arc::new(Mutex::new(session)));
        log::debug!("created session {id} (K={k})");
        Ok(SessionInfo {
            session_id: id,
            history_window: k,
            latency_budget_ms,
        })
    }

    pub fn push_event(
        &self,
        id: &str,
        event: EventRequest,
    ) -> Result<HistorySummary, ServiceError> {
        self.with_session(id, |session| {
            if let Some(line) = event.cursor_line {
                if line == 0 {
                    return Err(ServiceError::InvalidRequest(
                        "cursor_line is 1-based".into(),
                    ));
                }
            }
            let pre = match event.pre {
                Some(pre) if !session.initialized => {
                    session.state = TrajectoryState::new(pre.clone());
                    session.initialized = true;
                    pre
                }
                Some(pre) => pre,
                None => session.state.current_text().to_owned(),
            };
            session.initialized = true;
            let mut edit = EditEvent::new(pre, event.post);
            edit.post.cursor_line = event.cursor_line;
            let outcome = session.ingest(&edit)?;
            Ok(session.summary(outcome_name(outcome)))
        })
    }

    fn call_backend(
        backend: &dyn CompletionBackend,
        prompt: &PromptBundle,
    ) -> Result<(String, f64), ServiceError> {
        let completion = backend.complete(prompt)?;
        Ok((completion.text, completion.latency_ms))
    }

    fn finish_timing(session: &Session, suggestion: &mut Suggestion, started: Instant) {
        let total = started.elapsed().as_secs_f64() * 1e3;
        suggestion.latency_ms = total.max(suggestion.backend_ms);
        suggestion.local_ms = (total - suggestion.backend_ms).max(0.0);
        suggestion.over_budget = suggestion.latency_ms > session.latency_budget_ms as f64;
        if suggestion.over_budget {
            log::warn!(
                "session {}: {:?} suggestion took {:.1} ms (budget {} ms)",
                session.id,
                suggestion.kind,
                suggestion.latency_ms,
                session.latency_budget_ms
            );
        }
    }

    pub fn suggest_location(&self, id: &str) -> Result<Suggestion, ServiceError> {
        self.with_session(id, |session| {
            let started = Instant::now();
            let snapshot = session.snapshot();
            let prompt = build_location_prompt(
                &snapshot,
                &session.rendered_history(),
                &session.prompt_config(self.config.prompt_budget_bytes),
            )
            .map_err(|e| ServiceError::Prompt(e.to_string()))?;
            let (raw, backend_ms) = Self::call_backend(self.location_backend.as_ref(), &prompt)?;

            let lines = snapshot.line_count();
            let location = match parse_location_output(&raw) {
                Ok(Location::Line(n)) if n <= lines => Location::Line(n),
                Ok(Location::Line(n)) => {
                    log::warn!("location {n} beyond {lines}-line file, treating as keep");
                    Location::Keep
                }
                Ok(Location::Keep) => Location::Keep,
                Err(e) => {
                    log::warn!("session {}: {e}; treating as keep", session.id);
                    Location::Keep
                }
            };
            let region = match location {
                Location::Line(n) => LineRange::new(n, n),
                Location::Keep => LineRange::empty_at(1),
            };
            let mut suggestion = Suggestion {
                suggestion_id: uuid::Uuid::new_v4().simple().to_string(),
                kind: SuggestionKind::Location,
                location: Some(location),
                window_start: None,
                window_end: None,
                window_text: None,
                diff: String::new(),
                unchanged: location == Location::Keep,
                latency_ms: 0.0,
                backend_ms,
                local_ms: 0.0,
                over_budget: false,
            };
            Self::finish_timing(session, &mut suggestion, started);
            session.pending = Some(Pending {
                suggestion: suggestion.clone(),
                region,
                delta: None,
                window_sha256: String::new(),
                stale: false,
            });
            Ok(suggestion)
        })
    }

    pub fn suggest_edit(&self, id: &str, line: usize) -> Result<Suggestion, ServiceError> {
        self.with_session(id, |session| {
            let started = Instant::now();
            let mut snapshot = session.snapshot();
            let (lines, _) = split_lines(&snapshot.text);
            let total = lines.len().max(1);
            if line == 0 || line > total {
                return Err(ServiceError::LineOutOfRange { line, lines: total });
            }
            let (start, end) = if lines.is_empty() {
                (1, 0)
            } else {
                editable_window(lines.len(), line, self.config.edit_radius, None)
            };
            let window_pre = join_lines(&lines[start - 1..end], false);
            snapshot.cursor_line = Some(line);
            let prompt = build_edit_prompt(
                &snapshot,
                &session.rendered_history(),
                start,
                &window_pre,
                &session.prompt_config(self.config.prompt_budget_bytes),
            )
            .map_err(|e| ServiceError::Prompt(e.to_string()))?;
            let (raw, backend_ms) = Self::call_backend(self.edit_backend.as_ref(), &prompt)?;

            let window_post = match parse_edit_output(&raw, &window_pre) {
                Ok(parsed) => parsed.window,
                Err(e) => {
                    log::warn!("session {}: {e}; treating as unchanged", session.id);
                    window_pre.clone()
                }
            };
            let delta = diff_lines(&window_lines(&window_pre), &window_lines(&window_post))
                .shifted(start - 1);
            let unchanged = !delta.has_changes();
            let mut suggestion = Suggestion {
                suggestion_id: uuid::Uuid::new_v4().simple().to_string(),
                kind: SuggestionKind::Edit,
                location: None,
                window_start: Some(start),
                window_end: Some(end.max(start)),
                window_text: Some(window_post),
                diff: render_nes_diff(&delta),
                unchanged,
                latency_ms: 0.0,
                backend_ms,
                local_ms: 0.0,
                over_budget: false,
            };
            Self::finish_timing(session, &mut suggestion, started);
            session.pending = Some(Pending {
                suggestion: suggestion.clone(),
                region: LineRange::new(start, end.max(start)),
                delta: Some(delta),
                window_sha256: text_sha256(&window_pre),
                stale: false,
            });
            Ok(suggestion)
        })
    }

    pub fn accept(&self, id: &str, suggestion_id: &str) -> Result<AcceptSummary, ServiceError> {
        self.with_session(id, |session| {
            let pending = match session.pending.take() {
                Some(p) if p.suggestion.suggestion_id == suggestion_id => p,
                other => {
                    session.pending = other;
                    return Err(ServiceError::NoPending);
                }
            };
            if pending.stale {
                return Err(ServiceError::StaleSuggestion);
            }
            let mut jump_target = None;
            let mut applied = false;
            match pending.suggestion.kind {
                SuggestionKind::Location => {
                    if let Some(Location::Line(n)) = pending.suggestion.location {
                        let lines = session.snapshot().line_count();
                        if n > lines {
                            return Err(ServiceError::StaleSuggestion);
                        }
                        session.cursor_line = Some(n);
                        session.jumps.push(n);
                        jump_target = Some(n);
                        applied = true;
                    }
                }
                SuggestionKind::Edit => {
                    let current = session.state.current_text().to_owned();
                    let (lines, _) = split_lines(&current);
                    let region = pending.region;
                    let window_now = if lines.is_empty() {
                        String::new()
                    } else if region.end > lines.len() {
                        return Err(ServiceError::StaleSuggestion);
                    } else {
                        join_lines(&lines[region.start - 1..region.end], false)
                    };
                    if text_sha256(&window_now) != pending.window_sha256 {
                        return Err(ServiceError::StaleSuggestion);
                    }
                    let delta = pending
                        .delta
                        .as_ref()
                        .expect("edit suggestions carry a delta");
                    if delta.has_changes() {
                        let post = apply_diff(&current, delta)
                            .map_err(|_| ServiceError::StaleSuggestion)?;
                        let mut event = EditEvent::new(current, post);
                        let last = delta.post_range.end.max(delta.post_range.start);
                        event.post.cursor_line = Some(last.max(1));
                        session.ingest(&event)?;
                        applied = true;
                    }
                }
            }
            Ok(AcceptSummary {
                kind: pending.suggestion.kind,
                applied,
                text_sha256: text_sha256(session.state.current_text()),
                history_len: session.state.history().len(),
                active_present: session.state.active().is_some(),
                cursor_line: session.snapshot().cursor_or_default(),
                jump_target,
            })
        })
    }

    pub fn reject(&self, id: &str, suggestion_id: &str) -> Result<(), ServiceError> {
        self.with_session(id, |session| match session.pending.take() {
            Some(p) if p.suggestion.suggestion_id == suggestion_id => {
                session.rejections += 1;
                log::info!(
                    "session {}: {:?} suggestion rejected",
                    session.id,
                    p.suggestion.kind
                );
                Ok(())
            }
            other => {
                session.pending = other;
                Err(ServiceError::NoPending)
            }
        })
    }

    pub fn state(&self, id: &str) -> Result<SessionState, ServiceError> {
        self.with_session(id, |session| {
            Ok(SessionState {
                session_id: session.id.clone(),
                language: session.language.clone(),
                history_window: session.history_window.max_edits(),
                latency_budget_ms: session.latency_budget_ms,
                history: session
                    .state
                    .history()
                    .iter()
                    .map(render_nes_diff)
                    .collect(),
                active: session.state.active().map(render_nes_diff),
                text: session.state.current_text().to_owned(),
                text_sha256: text_sha256(session.state.current_text()),
                cursor_line: session.snapshot().cursor_or_default(),
                pending: session.pending.as_ref().map(|p| p.suggestion.clone()),
                jumps: session.jumps.clone(),
                rejections: session.rejections,
            })
        })
    }
}
