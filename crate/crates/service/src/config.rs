use nes_core::dataset::DEFAULT_WINDOW_RADIUS;
use nes_core::model_io::{BackendConfig, DEFAULT_PROMPT_BUDGET_BYTES};
use nes_core::trajectory::DEFAULT_HISTORY_WINDOW;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DEFAULT_SESSION_TTL_SECS: u64 = 30 * 60;
/// Informational end-to-end budget per suggestion; exceeding it is logged,
/// not enforced.
pub const DEFAULT_LATENCY_BUDGET_MS: u64 = 450;
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub history_window: usize,
    pub location_backend: BackendConfig,
    pub edit_backend: BackendConfig,
    pub session_ttl_secs: u64,
    pub max_sessions: usize,
    pub latency_budget_ms: u64,
    /// Lines on each side of the target line in the editable window.
    pub edit_radius: usize,
    pub prompt_budget_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: DEFAULT_BIND.to_owned(),
            history_window: DEFAULT_HISTORY_WINDOW,
            location_backend: BackendConfig::default(),
            edit_backend: BackendConfig::default(),
            session_ttl_secs: DEFAULT_SESSION_TTL_SECS,
            max_sessions: 1024,
            latency_budget_ms: DEFAULT_LATENCY_BUDGET_MS,
            edit_radius: DEFAULT_WINDOW_RADIUS,
            prompt_budget_bytes: DEFAULT_PROMPT_BUDGET_BYTES,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        let positive = [
            ("history_window", self.history_window as u64),
            ("session_ttl_secs", self.session_ttl_secs),
            ("max_sessions", self.max_sessions as u64),
            ("latency_budget_ms", self.latency_budget_ms),
            ("edit_radius", self.edit_radius as u64),
            ("prompt_budget_bytes", self.prompt_budget_bytes as u64),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(ServiceError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Same backend settings for both roles.
    pub fn with_backend(mut self, backend: BackendConfig) -> Self {
        self.location_backend = backend.clone();
        self.edit_backend = backend;
        self
    }
}
