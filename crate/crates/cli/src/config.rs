use std::path::{Path, PathBuf};

use anyhow::Context;
use nes_core::dataset::{DatasetConfig, LabelingMode};
use nes_core::eval::{ReportFormat, DEFAULT_EVAL_CONCURRENCY};
use nes_core::model_io::{BackendConfig, BackendMode};
use nes_core::HistoryWindow;
use nes_service::ServiceConfig;
use serde::{Deserialize, Serialize};

/// Everything a TOML `--config` file may set. Missing sections and keys
/// take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    /// Backend for evaluation runs and the relevance judge.
    pub backend: BackendConfig,
    pub dataset: DatasetConfig,
    pub eval: EvalSection,
    pub service: ServiceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub concurrency: usize,
    /// A run whose failed-sample fraction exceeds this exits non-zero.
    pub max_error_rate: f64,
    pub format: ReportFormat,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            concurrency: DEFAULT_EVAL_CONCURRENCY,
            max_error_rate: 0.05,
            format: ReportFormat::Markdown,
        }
    }
}

/// Command-line and environment values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub history_window: Option<usize>,
    pub keep_ratio: Option<f64>,
    pub labeling_mode: Option<LabelingMode>,
    pub backend_url: Option<String>,
    pub mock_table: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Option<ReportFormat>,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) -> anyhow::Result<()> {
        if let Some(k) = o.history_window {
            self.dataset.history_window =
                HistoryWindow::new(k).context("--history-window must be at least 1")?;
            self.service.history_window = k;
        }
        if let Some(ratio) = o.keep_ratio {
            self.dataset.keep_ratio = ratio;
        }
        if let Some(mode) = o.labeling_mode {
            self.dataset.labeling_mode = mode;
        }
        if let Some(seed) = o.seed {
            self.dataset.seed = seed;
        }
        if let Some(format) = o.format {
            self.eval.format = format;
        }
        let backends = [
            &mut self.backend,
            &mut self.service.location_backend,
            &mut self.service.edit_backend,
        ];
        for backend in backends {
            if let Some(url) = &o.backend_url {
                backend.mode = BackendMode::Http;
                backend.endpoint = url.clone();
            }
            if let Some(table) = &o.mock_table {
                backend.mode = BackendMode::ScriptedMock;
                backend.mock_table = Some(table.clone());
            }
        }
        self.dataset.validate()?;
        self.service.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
