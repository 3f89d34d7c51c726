//! Prompt construction, output parsing, and completion backends.

mod backend;
mod output;
mod prompt;

use thiserror::Error;

pub use backend::{
    chat_request_body, complete, read_table, BackendConfig, BackendError, BackendMode, Completion,
    CompletionBackend, HttpBackend, QueueBackend, ScriptedBackend, ScriptedResponse, FALLBACK_KEY,
};
pub use output::{parse_edit_output, parse_location_output, ParsedEdit};
pub use prompt::{
    build_edit_prompt, build_judge_prompt, build_location_prompt, prompt_digest, PromptBundle,
    PromptConfig, PromptRole, DEFAULT_PROMPT_BUDGET_BYTES, EDITABLE_REGION_END,
    EDITABLE_REGION_START, EMPTY_HISTORY, TEMPLATE_VERSION,
};

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("prompt needs {needed} bytes, budget is {budget}")]
    ContextOverflow { needed: usize, budget: usize },
    #[error("editable window lines {start}-{end} do not match the file")]
    WindowMismatch { start: usize, end: usize },
    #[error("unparseable model output: {0:?}")]
    UnparseableOutput(String),
    #[error("model returned no output")]
    EmptyOutput,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("mock table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
