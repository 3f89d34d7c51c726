//! Edit trajectory tracking.
//!
//! Each incoming event is diffed against the previous file state. The result
//! is merged into the active delta when the two touch the same region;
//! otherwise the active delta is finalized into history and the new one takes
//! its place.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{
    apply_diff, compute_diff, diff_lines, split_lines, CodeSnapshot, DeltaScript, DiffError,
    LineRange,
};

pub const DEFAULT_HISTORY_WINDOW: usize = 3;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("event pre-text does not match the current file state")]
    StreamDiscontinuity,
    #[error("deltas do not overlap (post {post} vs pre {pre})")]
    NotOverlapping { post: LineRange, pre: LineRange },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("history window must be at least 1")]
    InvalidWindow,
    #[error("event log line {line}: {message}")]
    EventLog { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditEvent {
    pub pre: CodeSnapshot,
    pub post: CodeSnapshot,
    pub timestamp_ms: u64,
}

impl EditEvent {
    pub fn new(pre: impl Into<String>, post: impl Into<String>) -> Self {
        EditEvent {
            pre: CodeSnapshot::new(pre),
            post: CodeSnapshot::new(post),
            timestamp_ms: 0,
        }
    }
}

/// Whether `next` (computed against the file produced by `prev`) lands within
/// `gap` lines of `prev`'s post-edit region.
pub fn overlap(prev: &DeltaScript, next: &DeltaScript, gap: usize) -> bool {
    prev.post_range.distance(&next.pre_range) <= gap as isize
}

/// Composes two overlapping deltas into one, relative to `base_text` (the
/// file before `first`). The merged delta is a fresh diff over the union of
/// both regions.
pub fn merge_deltas(
    first: &DeltaScript,
    second: &DeltaScript,
    base_text: &str,
    gap: usize,
) -> Result<DeltaScript, TrajectoryError> {
    if !overlap(first, second, gap) {
        return Err(TrajectoryError::NotOverlapping {
            post: first.post_range,
            pre: second.pre_range,
        });
    }
    let middle = apply_diff(base_text, first)?;
    let last = apply_diff(&middle, second)?;

    // Union in the intermediate file's coordinates, then projected back
    // through `first` and forward through `second`.
    let start = first.post_range.start.min(second.pre_range.start);
    let mid_end = first.post_range.end.max(second.pre_range.end);
    let base_end = (mid_end as isize - first.line_delta()) as usize;
    let last_end = (mid_end as isize + second.line_delta()) as usize;

    let (base_lines, base_nl) = split_lines(base_text);
    let (last_lines, last_nl) = split_lines(&last);
    let mut merged = diff_lines(
        &base_lines[start - 1..base_end],
        &last_lines[start - 1..last_end],
    )
    .shifted(start - 1);
    if base_nl != last_nl {
        merged.final_newline = Some(last_nl);
        if !merged.has_changes() {
            merged.pre_range = LineRange::empty_at(base_lines.len() + 1);
            merged.post_range = LineRange::empty_at(last_lines.len() + 1);
        }
    }
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    /// The event changed nothing and was dropped.
    Ignored,
    /// No delta was active; the event's diff became the active delta.
    Started,
    /// The event overlapped the active delta and was merged into it.
    Merged,
    /// The active delta was finalized into history and replaced.
    Rotated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryState {
    active: Option<DeltaScript>,
    history: Vec<DeltaScript>,
    base_text: String,
    current_text: String,
    merge_gap: usize,
}

impl TrajectoryState {
    pub fn new(initial_text: impl Into<String>) -> Self {
        let text = initial_text.into();
        TrajectoryState {
            active: None,
            history: Vec::new(),
            base_text: text.clone(),
            current_text: text,
            merge_gap: 0,
        }
    }

    /// Deltas separated by at most `gap` unchanged lines are merged too.
    pub fn with_merge_gap(mut self, gap: usize) -> Self {
        self.merge_gap = gap;
        self
    }

    pub fn active(&self) -> Option<&DeltaScript> {
        self.active.as_ref()
    }

    pub fn history(&self) -> &[DeltaScript] {
        &self.history
    }

    pub fn base_text(&self) -> &str {
        &self.base_text
    }

    pub fn current_text(&self) -> &str {
        &self.current_text
    }

    pub fn ingest_event(&mut self, event: &EditEvent) -> Result<IngestOutcome, TrajectoryError> {
        if event.pre.text != self.current_text {
            return Err(TrajectoryError::StreamDiscontinuity);
        }
        let delta = compute_diff(&event.pre.text, &event.post.text);
        if delta.is_empty() {
            return Ok(IngestOutcome::Ignored);
        }

        let outcome = match self.active.take() {
            None => {
                self.base_text.clone_from(&self.current_text);
                self.active = Some(delta);
                IngestOutcome::Started
            }
            Some(active) if overlap(&active, &delta, self.merge_gap) => {
                let merged = merge_deltas(&active, &delta, &self.base_text, self.merge_gap)?;
                // Edits that cancel out leave nothing to track.
                if !merged.is_empty() {
                    self.active = Some(merged);
                }
                IngestOutcome::Merged
            }
            Some(active) => {
                self.history.push(active);
                self.base_text.clone_from(&self.current_text);
                self.active = Some(delta);
                IngestOutcome::Rotated
            }
        };
        self.current_text.clone_from(&event.post.text);
        Ok(outcome)
    }

    /// Convenience for callers that only hold the next file text.
    pub fn ingest_text(&mut self, post: &str) -> Result<IngestOutcome, TrajectoryError> {
        let event = EditEvent::new(self.current_text.clone(), post);
        self.ingest_event(&event)
    }

    /// Finalized history followed by the active delta, without flushing.
    pub fn recent_deltas(&self) -> Vec<&DeltaScript> {
        self.history.iter().chain(self.active.as_ref()).collect()
    }

    /// Flushes the active delta into history and returns the full history.
    pub fn finalize(&mut self) -> EditTrajectory {
        if let Some(active) = self.active.take() {
            if !active.is_empty() {
                self.history.push(active);
            }
        }
        self.base_text.clone_from(&self.current_text);
        EditTrajectory {
            deltas: self.history.clone(),
        }
    }
}

/// Finalized deltas in the order they happened. Each delta is expressed in
/// the coordinates of the file as it stood right before it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditTrajectory {
    pub deltas: Vec<DeltaScript>,
}

impl EditTrajectory {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// File states before each delta, plus the final state.
    pub fn snapshots(&self, initial_text: &str) -> Result<Vec<String>, TrajectoryError> {
        let mut states = Vec::with_capacity(self.deltas.len() + 1);
        states.push(initial_text.to_owned());
        for delta in &self.deltas {
            let next = apply_diff(states.last().expect("non-empty"), delta)?;
            states.push(next);
        }
        Ok(states)
    }

    pub fn replay(&self, initial_text: &str) -> Result<String, TrajectoryError> {
        Ok(self
            .snapshots(initial_text)?
            .pop()
            .expect("snapshots include the initial state"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct HistoryWindow {
    max_edits: usize,
}

impl HistoryWindow {
    pub fn new(max_edits: usize) -> Result<Self, TrajectoryError> {
        if max_edits == 0 {
            return Err(TrajectoryError::InvalidWindow);
        }
        Ok(HistoryWindow { max_edits })
    }

    pub fn max_edits(&self) -> usize {
        self.max_edits
    }

    /// The most recent `max_edits` entries, oldest first.
    pub fn apply<'a, T>(&self, entries: &'a [T]) -> &'a [T] {
        &entries[entries.len().saturating_sub(self.max_edits)..]
    }
}

impl TryFrom<usize> for HistoryWindow {
    type Error = TrajectoryError;

    fn try_from(max_edits: usize) -> Result<Self, Self::Error> {
        HistoryWindow::new(max_edits)
    }
}

impl From<HistoryWindow> for usize {
    fn from(window: HistoryWindow) -> usize {
        window.max_edits
    }
}

impl Default for HistoryWindow {
    fn default() -> Self {
        HistoryWindow {
            max_edits: DEFAULT_HISTORY_WINDOW,
        }
    }
}

pub fn windowed_history<'a>(traj: &'a EditTrajectory, window: &HistoryWindow) -> &'a [DeltaScript] {
    window.apply(&traj.deltas)
}

/// One row of an event log file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub ts: u64,
    pub pre: String,
    pub post: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cursor_line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

impl EventRecord {
    pub fn into_event(self, default_language: &str) -> EditEvent {
        let language = self.language.unwrap_or_else(|| default_language.to_owned());
        EditEvent {
            pre: CodeSnapshot::new(self.pre).with_language(language.clone()),
            post: CodeSnapshot {
                text: self.post,
                cursor_line: self.cursor_line,
                language,
            },
            timestamp_ms: self.ts,
        }
    }
}

pub fn read_event_log(path: &Path) -> Result<Vec<EventRecord>, TrajectoryError> {
    let file = std::fs::File::open(path)?;
    parse_event_log(std::io::BufReader::new(file))
}

pub fn parse_event_log(reader: impl BufRead) -> Result<Vec<EventRecord>, TrajectoryError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| TrajectoryError::EventLog {
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_event_log(
    mut writer: impl Write,
    records: &[EventRecord],
) -> Result<(), TrajectoryError> {
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Runs a whole event log through a fresh trajectory state.
pub fn replay_events(
    records: &[EventRecord],
    gap: usize,
) -> Result<(String, TrajectoryState), TrajectoryError> {
    let initial = records.first().map(|r| r.pre.clone()).unwrap_or_default();
    let mut state = TrajectoryState::new(initial.clone()).with_merge_gap(gap);
    for (idx, record) in records.iter().enumerate() {
        let event = record.clone().into_event("");
        state.ingest_event(&event).map_err(|e| match e {
            TrajectoryError::StreamDiscontinuity => TrajectoryError::EventLog {
                line: idx + 1,
                message: "pre text does not continue from the previous event".to_owned(),
            },
            other => other,
        })?;
    }
    Ok((initial, state))
}
