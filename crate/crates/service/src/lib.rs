//! Stateful next-edit suggestion service.
//!
//! Each session tracks one file's editing trajectory. Clients push edit
//! events, ask for a next-location or an edit suggestion, and accept or
//! reject it; accepted edits are ingested exactly like manual ones so they
//! become history for the next round.

mod config;
pub mod http;
pub mod mock_server;
mod service;

use nes_core::model_io::BackendError;
use thiserror::Error;

pub use config::{
    ServiceConfig, DEFAULT_BIND, DEFAULT_LATENCY_BUDGET_MS, DEFAULT_SESSION_TTL_SECS,
};
pub use service::{
    AcceptSummary, CreateSession, EventRequest, HistorySummary, SessionInfo, SessionState,
    Suggestion, SuggestionKind, SuggestionService,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session limit of {max} reached")]
    CapacityExceeded { max: usize },
    #[error("event pre text does not match the session's current text")]
    StreamDiscontinuity,
    #[error("line {line} is outside the file (1-{lines})")]
    LineOutOfRange { line: usize, lines: usize },
    #[error("the file changed since the suggestion was issued")]
    StaleSuggestion,
    #[error("no pending suggestion with that id")]
    NoPending,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cannot build prompt: {0}")]
    Prompt(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl ServiceError {
    /// Stable machine-readable error code used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::CapacityExceeded { .. } => "capacity_exceeded",
            ServiceError::StreamDiscontinuity => "stream_discontinuity",
            ServiceError::LineOutOfRange { .. } => "line_out_of_range",
            ServiceError::StaleSuggestion => "stale_suggestion",
            ServiceError::NoPending => "no_pending",
            ServiceError::Backend(BackendError::Timeout { .. }) => "backend_timeout",
            ServiceError::Backend(_) => "backend_error",
            ServiceError::Prompt(_) => "prompt_error",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::Config(_) => "invalid_config",
        }
    }
}
