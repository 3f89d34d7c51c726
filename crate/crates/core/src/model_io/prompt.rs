//! Prompt templates for the location, edit and relevance-judge models.
//!
//! Layout of every user message, in order:
//!
//! 1. edit history, oldest first, one NES diff block per entry
//! 2. the current file with 1-based line numbers
//! 3. cursor marker
//! 4. (edit prompts) the target line and the editable region between sentinels
//!
//! The system message plus the history section form the stable prefix: it
//! only changes when history changes, so consecutive requests in a session
//! can reuse a serving-side prefix cache.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelIoError;
use crate::diff::{split_lines, CodeSnapshot};
use crate::trajectory::HistoryWindow;

/// Bumped whenever any template text below changes.
pub const TEMPLATE_VERSION: &str = "nes-prompt/1";

pub const DEFAULT_PROMPT_BUDGET_BYTES: usize = 24 * 1024;

pub const EDITABLE_REGION_START: &str = "<|editable_region_start|>";
pub const EDITABLE_REGION_END: &str = "<|editable_region_end|>";
pub const EMPTY_HISTORY: &str = "EDIT HISTORY: (none)";

const LOCATION_SYSTEM: &str = "\
You predict where a developer will edit next.
You are given the developer's recent edits in NES diff format (each row is
`<line><marker>| <content>`, marker `-` deleted, `+` inserted, space unchanged;
deleted and unchanged rows use pre-edit line numbers, inserted rows use
post-edit line numbers) and the current file with line numbers.
If the recent edits imply a follow-up change elsewhere in the file, answer
with exactly one line `LINE <n>` naming the line to jump to.
If no follow-up change is implied, answer with exactly one line `KEEP`.
Output nothing else.
";

const EDIT_SYSTEM: &str = "\
You rewrite a region of code to continue the developer's recent edits.
You are given the developer's recent edits in NES diff format (each row is
`<line><marker>| <content>`, marker `-` deleted, `+` inserted, space unchanged;
deleted and unchanged rows use pre-edit line numbers, inserted rows use
post-edit line numbers), the current file with line numbers, and an editable
region between <|editable_region_start|> and <|editable_region_end|>.
Output only the rewritten editable region inside a single ``` fenced block,
without the sentinel lines. If nothing should change, output the region
unchanged.
";

const JUDGE_SYSTEM: &str = "\
You review developer edit sequences for a next-edit dataset.
Decide whether the CANDIDATE EDIT is a logical, predictable continuation of
the EDIT HISTORY: for example the same refactoring applied elsewhere, a call
site updated after a signature change, or the next step of one task.
It is IRRELEVANT when it starts an unrelated task or cannot be inferred from
the history.
Answer on the first line with exactly one word, RELEVANT or IRRELEVANT,
optionally followed by a short reason on the same or following lines.
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptRole {
    Location,
    Edit,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub role: PromptRole,
    /// Bytes of `system` followed by `user` that stay identical while the
    /// session's history does not change.
    pub stable_prefix_len: usize,
}

impl PromptBundle {
    pub fn total_len(&self) -> usize {
        self.system.len() + self.user.len()
    }

    /// The stable prefix, which may extend from `system` into `user`.
    pub fn stable_prefix(&self) -> String {
        let mut joined = String::with_capacity(self.total_len());
        joined.push_str(&self.system);
        joined.push_str(&self.user);
        joined.truncate(self.stable_prefix_len);
        joined
    }

    /// Key used by scripted backends to look up canned responses.
    pub fn digest(&self) -> String {
        prompt_digest(&self.system, &self.user)
    }
}

/// Hex SHA-256 over `system`, a NUL byte, then `user`.
pub fn prompt_digest(system: &str, user: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(system.as_bytes());
    hasher.update([0u8]);
    hasher.update(user.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub history_window: HistoryWindow,
    pub budget_bytes: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            history_window: HistoryWindow::default(),
            budget_bytes: DEFAULT_PROMPT_BUDGET_BYTES,
        }
    }
}

fn history_section(history: &[String]) -> String {
    if history.is_empty() {
        return format!("{EMPTY_HISTORY}\n");
    }
    let mut out = String::from("EDIT HISTORY (oldest first):\n");
    for (i, diff) in history.iter().enumerate() {
        let _ = writeln!(out, "### edit {}", i + 1);
        out.push_str(diff);
        out.push('\n');
    }
    out
}

fn file_section(current: &CodeSnapshot) -> String {
    let (lines, _) = split_lines(&current.text);
    let language = if current.language.is_empty() {
        "text"
    } else {
        current.language.as_str()
    };
    let mut out = format!(
        "\nCURRENT FILE ({language}, {} lines):\n",
        lines.len().max(1)
    );
    if lines.is_empty() {
        out.push_str("1: \n");
    }
    for (i, line) in lines.iter().enumerate() {
        let _ = writeln!(out, "{}: {line}", i + 1);
    }
    let _ = writeln!(out, "CURSOR: line {}", current.cursor_or_default());
    out
}

/// Assembles system + history + tail, dropping the oldest history entries
/// until the prompt fits the byte budget.
fn assemble(
    role: PromptRole,
    system: &str,
    history: &[String],
    tail: &str,
    cfg: &PromptConfig,
) -> Result<PromptBundle, ModelIoError> {
    let mut history = cfg.history_window.apply(history);
    loop {
        let prefix = history_section(history);
        let total = system.len() + prefix.len() + tail.len();
        if total <= cfg.budget_bytes {
            return Ok(PromptBundle {
                system: system.to_owned(),
                stable_prefix_len: system.len() + prefix.len(),
                user: prefix + tail,
                role,
            });
        }
        if history.is_empty() {
            return Err(ModelIoError::ContextOverflow {
                needed: total,
                budget: cfg.budget_bytes,
            });
        }
        history = &history[1..];
    }
}

/// Location prompt. `history` holds rendered NES diffs, oldest first; only
/// the configured window of most recent entries is used.
pub fn build_location_prompt(
    current: &CodeSnapshot,
    history: &[String],
    cfg: &PromptConfig,
) -> Result<PromptBundle, ModelIoError> {
    let tail = file_section(current);
    assemble(PromptRole::Location, LOCATION_SYSTEM, history, &tail, cfg)
}

/// Edit prompt for the region starting at `window_start` whose current text
/// is `window_pre`.
pub fn build_edit_prompt(
    current: &CodeSnapshot,
    history: &[String],
    window_start: usize,
    window_pre: &str,
    cfg: &PromptConfig,
) -> Result<PromptBundle, ModelIoError> {
    let (lines, _) = split_lines(&current.text);
    let window: Vec<&str> = window_pre.split('\n').collect();
    let window_end = window_start + window.len() - 1;
    let in_file =
        window_start >= 1 && (window_end <= lines.len() || (lines.is_empty() && window == [""]));
    if !in_file || (!lines.is_empty() && lines[window_start - 1..window_end] != window[..]) {
        return Err(ModelIoError::WindowMismatch {
            start: window_start,
            end: window_end,
        });
    }

    let mut tail = file_section(current);
    let target = current.cursor_or_default();
    let _ = write!(
        tail,
        "EDIT LOCATION: line {target}\nEDITABLE REGION (lines {window_start}-{window_end}):\n\
         {EDITABLE_REGION_START}\n{window_pre}\n{EDITABLE_REGION_END}\n"
    );
    assemble(PromptRole::Edit, EDIT_SYSTEM, history, &tail, cfg)
}

/// Relevance-judge prompt: history plus the candidate next edit.
pub fn build_judge_prompt(
    history: &[String],
    candidate_diff: &str,
    cfg: &PromptConfig,
) -> Result<PromptBundle, ModelIoError> {
    let tail = format!("\nCANDIDATE EDIT:\n{candidate_diff}\n");
    assemble(PromptRole::Judge, JUDGE_SYSTEM, history, &tail, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot() -> CodeSnapshot {
        CodeSnapshot::new("a\nb\nc\nd\n")
            .with_cursor(2)
            .with_language("Rust")
    }

    fn diffs(n: usize) -> Vec<String> {
        (1..=n)
            .map(|i| format!("{i}-| old {i}\n{i}+| new {i}"))
            .collect()
    }

    #[test]
    fn empty_history_sentinel() {
        let p = build_location_prompt(&snapshot(), &[], &PromptConfig::default()).unwrap();
        assert!(p.user.starts_with("EDIT HISTORY: (none)\n"));
        assert!(p.user.contains("2: b\n"));
        assert!(p.user.ends_with("CURSOR: line 2\n"));
    }

    #[test]
    fn history_is_windowed() {
        let p = build_location_prompt(&snapshot(), &diffs(5), &PromptConfig::default()).unwrap();
        assert!(!p.user.contains("old 2"));
        for i in 3..=5 {
            assert!(p.user.contains(&format!("{i}+| new {i}")));
        }
        assert_eq!(p.user.matches("### edit").count(), 3);
    }

    #[test]
    fn cursor_change_keeps_prefix() {
        let cfg = PromptConfig::default();
        let h = diffs(2);
        let a = build_location_prompt(&snapshot(), &h, &cfg).unwrap();
        let b = build_location_prompt(&snapshot().with_cursor(4), &h, &cfg).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.stable_prefix_len, b.stable_prefix_len);
        assert_eq!(a.stable_prefix().as_bytes(), b.stable_prefix().as_bytes());
    }

    #[test]
    fn budget_drops_oldest_history_first() {
        let cfg = PromptConfig {
            history_window: HistoryWindow::new(9).unwrap(),
            budget_bytes: LOCATION_SYSTEM.len() + 200,
        };
        let p = build_location_prompt(&snapshot(), &diffs(9), &cfg).unwrap();
        assert!(p.total_len() <= cfg.budget_bytes);
        assert!(p.user.contains("new 9"));
        assert!(!p.user.contains("new 1\n"));

        let tiny = PromptConfig {
            budget_bytes: 10,
            ..cfg
        };
        assert!(matches!(
            build_location_prompt(&snapshot(), &diffs(2), &tiny),
            Err(ModelIoError::ContextOverflow { .. })
        ));
    }

    #[test]
    fn edit_prompt_region() {
        let cfg = PromptConfig::default();
        let p = build_edit_prompt(&snapshot(), &[], 2, "b\nc", &cfg).unwrap();
        assert!(p
            .user
            .contains("<|editable_region_start|>\nb\nc\n<|editable_region_end|>\n"));
        assert!(p.user.contains("EDITABLE REGION (lines 2-3)"));
        assert!(build_edit_prompt(&snapshot(), &[], 4, "d", &cfg).is_ok());
        assert!(matches!(
            build_edit_prompt(&snapshot(), &[], 2, "b\nX", &cfg),
            Err(ModelIoError::WindowMismatch { start: 2, end: 3 })
        ));
        assert!(matches!(
            build_edit_prompt(&snapshot(), &[], 4, "d\ne", &cfg),
            Err(ModelIoError::WindowMismatch { .. })
        ));
    }

    #[test]
    fn edit_prompt_on_empty_file() {
        let cfg = PromptConfig::default();
        assert!(build_edit_prompt(&CodeSnapshot::new(""), &[], 1, "", &cfg).is_ok());
    }

    #[test]
    fn digest_depends_on_both_parts() {
        assert_ne!(prompt_digest("ab", "c"), prompt_digest("a", "bc"));
        assert_eq!(prompt_digest("a", "b").len(), 64);
    }
}
