//! Training and evaluation instances built from edit trajectories.
//!
//! Every pair of adjacent finalized deltas `(T, T+1)` yields one instance:
//! the file before delta `T+1`, the rendered history up to `T`, and delta
//! `T+1` as ground truth. Instances are then labeled `do` (the next edit
//! follows from history) or `keep` (it does not, so the right answer is to
//! suggest nothing), and the keep share is downsampled to a target ratio.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{
    apply_diff, join_lines, render_nes_diff, split_lines, CodeSnapshot, DeltaScript,
};
use crate::exec;
use crate::model_io::{
    build_judge_prompt, CompletionBackend, ModelIoError, PromptConfig, TEMPLATE_VERSION,
};
use crate::trajectory::{EditTrajectory, EventRecord, HistoryWindow};
use crate::Location;

pub const DEFAULT_KEEP_RATIO: f64 = 0.20;
pub const DEFAULT_WINDOW_RADIUS: usize = 16;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("snapshot {index} does not line up with delta {index}: {reason}")]
    Alignment { index: usize, reason: String },
    #[error("relevance judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("unparseable judge verdict: {0:?}")]
    UnparseableVerdict(String),
    #[error("cannot reach keep ratio {ratio} with {do_count} do and {keep_count} keep samples")]
    BalanceImpossible {
        ratio: f64,
        do_count: usize,
        keep_count: usize,
    },
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("dataset line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Do,
    Keep,
}

impl LabelKind {
    pub fn split(self) -> crate::metrics::Split {
        match self {
            LabelKind::Do => crate::metrics::Split::Do,
            LabelKind::Keep => crate::metrics::Split::Keep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelingMode {
    /// An LLM judge decides whether the next edit follows from history.
    RelevanceJudge,
    /// Next edit near the previous one is `keep`; elsewhere is `do`.
    LocationChange,
}

impl LabelingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelingMode::RelevanceJudge => "relevance_judge",
            LabelingMode::LocationChange => "location_change",
        }
    }
}

impl fmt::Display for LabelingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "relevance_judge" => Ok(LabelingMode::RelevanceJudge),
            "location_change" => Ok(LabelingMode::LocationChange),
            other => Err(format!("unknown labeling mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Location,
    Edit,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Location => "location",
            Task::Edit => "edit",
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "location" => Ok(Task::Location),
            "edit" => Ok(Task::Edit),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub history_window: HistoryWindow,
    pub keep_ratio: f64,
    pub labeling_mode: LabelingMode,
    pub editable_window_radius: usize,
    pub seed: u64,
    pub judge_concurrency: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            history_window: HistoryWindow::default(),
            keep_ratio: DEFAULT_KEEP_RATIO,
            labeling_mode: LabelingMode::LocationChange,
            editable_window_radius: DEFAULT_WINDOW_RADIUS,
            seed: 0,
            judge_concurrency: 4,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(0.0..=1.0).contains(&self.keep_ratio) {
            return Err(DatasetError::Config(format!(
                "keep_ratio {} outside [0, 1]",
                self.keep_ratio
            )));
        }
        if self.editable_window_radius == 0 {
            return Err(DatasetError::Config(
                "editable window radius must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Current file, windowed history, ground-truth location and edit, plus a label.
#[derive(Debug, Clone, PartialEq)]
pub struct EditInstance {
    pub current: CodeSnapshot,
    /// Rendered NES diffs, oldest first, already windowed.
    pub history: Vec<String>,
    pub gt_location: Location,
    pub window_start: usize,
    pub window_pre: String,
    pub gt_edit: String,
    pub label_kind: LabelKind,
    /// The edit that actually happened next, kept for judging.
    pub next_edit: DeltaScript,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceVerdict {
    pub relevant: bool,
    pub rationale: String,
}

/// Editable window around `line`, widened to cover `region` and clipped to
/// the file. Returns the inclusive 1-based window bounds.
pub fn editable_window(
    line_total: usize,
    line: usize,
    radius: usize,
    region: Option<&crate::diff::LineRange>,
) -> (usize, usize) {
    let line_total = line_total.max(1);
    let mut start = line.saturating_sub(radius).max(1);
    let mut end = (line + radius).min(line_total);
    if let Some(region) = region {
        start = start.min(region.start.max(1));
        end = end
            .max(region.end)
            .max(region.start.saturating_sub(1))
            .min(line_total);
    }
    (start, end.max(start))
}

/// Builds one instance per adjacent delta pair. `snapshots[i]` must be the
/// file state right before `traj.deltas[i]`; an optional extra entry holds
/// the final state.
pub fn formulate_instances(
    traj: &EditTrajectory,
    snapshots: &[CodeSnapshot],
    cfg: &DatasetConfig,
) -> Result<Vec<EditInstance>, DatasetError> {
    cfg.validate()?;
    let n = traj.deltas.len();
    if snapshots.len() < n || snapshots.len() > n + 1 {
        return Err(DatasetError::Alignment {
            index: snapshots.len().min(n),
            reason: format!("{} snapshots for {n} deltas", snapshots.len()),
        });
    }
    for (index, delta) in traj.deltas.iter().enumerate() {
        let next =
            apply_diff(&snapshots[index].text, delta).map_err(|e| DatasetError::Alignment {
                index,
                reason: e.to_string(),
            })?;
        if let Some(expected) = snapshots.get(index + 1) {
            if expected.text != next {
                return Err(DatasetError::Alignment {
                    index,
                    reason: "applying the delta does not produce the next snapshot".into(),
                });
            }
        }
    }

    let rendered: Vec<String> = traj.deltas.iter().map(render_nes_diff).collect();
    let mut instances = Vec::with_capacity(n.saturating_sub(1));
    for t in 1..n {
        let next = &traj.deltas[t];
        if !next.has_changes() {
            log::debug!("skipping newline-only delta {t}");
            continue;
        }
        let mut current = snapshots[t].clone();
        let (lines, _) = split_lines(&current.text);
        if current.cursor_line.is_none() {
            let last = &traj.deltas[t - 1];
            current.cursor_line = Some(
                last.post_range
                    .end
                    .max(last.post_range.start)
                    .clamp(1, lines.len().max(1)),
            );
        }

        let gt_line = next.pre_range.start.clamp(1, lines.len().max(1));
        let (window_start, window_pre, gt_edit) = if lines.is_empty() {
            (1, String::new(), next.post_region.clone())
        } else {
            let (ws, we) = editable_window(
                lines.len(),
                gt_line,
                cfg.editable_window_radius,
                Some(&next.pre_range),
            );
            let mut edited: Vec<&str> = lines[ws - 1..next.pre_range.start - 1].to_vec();
            edited.extend(next.post_lines());
            edited.extend_from_slice(&lines[next.pre_range.end..we]);
            (
                ws,
                join_lines(&lines[ws - 1..we], false),
                join_lines(&edited, false),
            )
        };
        if gt_edit == window_pre {
            log::debug!("skipping delta {t}: no visible change inside its window");
            continue;
        }

        instances.push(EditInstance {
            current,
            history: cfg.history_window.apply(&rendered[..t]).to_vec(),
            gt_location: Location::Line(gt_line),
            window_start,
            window_pre,
            gt_edit,
            label_kind: LabelKind::Do,
            next_edit: next.clone(),
        });
    }
    Ok(instances)
}

/// Asks `judge` whether the instance's next edit follows from its history.
pub fn judge_relevance(
    instance: &EditInstance,
    judge: &dyn CompletionBackend,
) -> Result<RelevanceVerdict, DatasetError> {
    let cfg = PromptConfig {
        history_window: HistoryWindow::new(instance.history.len().max(1))
            .expect("window is at least 1"),
        ..PromptConfig::default()
    };
    let prompt = build_judge_prompt(
        &instance.history,
        &render_nes_diff(&instance.next_edit),
        &cfg,
    )
    .map_err(|e| DatasetError::JudgeUnavailable(e.to_string()))?;
    let completion = judge
        .complete(&prompt)
        .map_err(|e| DatasetError::JudgeUnavailable(ModelIoError::from(e).to_string()))?;
    parse_verdict(&completion.text)
}

/// Reads `RELEVANT` or `IRRELEVANT` as the first word of the first non-blank
/// line; anything after it is the rationale.
pub fn parse_verdict(raw: &str) -> Result<RelevanceVerdict, DatasetError> {
    let trimmed = raw.trim_start();
    let word_len = trimmed
        .find(|c: char| !c.is_ascii_alphabetic())
        .unwrap_or(trimmed.len());
    let relevant = match trimmed[..word_len].to_ascii_uppercase().as_str() {
        "RELEVANT" => true,
        "IRRELEVANT" => false,
        _ => {
            return Err(DatasetError::UnparseableVerdict(
                raw.chars().take(120).collect(),
            ))
        }
    };
    let rationale = trimmed[word_len..]
        .trim_start_matches(|c: char| c.is_whitespace() || "-—–:.,;".contains(c))
        .trim_end()
        .to_owned();
    Ok(RelevanceVerdict {
        relevant,
        rationale,
    })
}

/// Applies the do/keep decision. Keep samples point at the keep token and
/// expect the window back unchanged.
pub fn label_instance(
    mut instance: EditInstance,
    verdict: Option<&RelevanceVerdict>,
    cfg: &DatasetConfig,
) -> EditInstance {
    let keep = match cfg.labeling_mode {
        LabelingMode::RelevanceJudge => verdict.is_some_and(|v| !v.relevant),
        LabelingMode::LocationChange => same_location(&instance, cfg.editable_window_radius),
    };
    if keep {
        instance.label_kind = LabelKind::Keep;
        instance.gt_location = Location::Keep;
        instance.gt_edit = instance.window_pre.clone();
    } else {
        instance.label_kind = LabelKind::Do;
    }
    instance
}

/// Whether the next edit lands within `radius` lines of where the developer
/// just edited (or, without history, of the cursor).
fn same_location(instance: &EditInstance, radius: usize) -> bool {
    let Location::Line(next_line) = instance.gt_location else {
        return true;
    };
    let anchor = instance.current.cursor_or_default();
    next_line.abs_diff(anchor) <= radius || instance.next_edit.pre_range.contains(anchor)
}

/// Downsamples keep samples so they make up `keep_ratio` of the output
/// (within one sample). Do samples are never dropped or invented.
pub fn balance_keep_ratio(
    samples: Vec<EditInstance>,
    cfg: &DatasetConfig,
) -> Result<Vec<EditInstance>, DatasetError> {
    let kinds: Vec<LabelKind> = samples.iter().map(|s| s.label_kind).collect();
    let keep_set = select_keep(&kinds, cfg.keep_ratio, cfg.seed)?;
    Ok(samples
        .into_iter()
        .enumerate()
        .filter(|(i, s)| s.label_kind == LabelKind::Do || keep_set.contains(i))
        .map(|(_, s)| s)
        .collect())
}

/// Indices of the keep samples to retain.
pub fn select_keep(
    kinds: &[LabelKind],
    ratio: f64,
    seed: u64,
) -> Result<BTreeSet<usize>, DatasetError> {
    let keep_idx: Vec<usize> = kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| **k == LabelKind::Keep)
        .map(|(i, _)| i)
        .collect();
    let do_count = kinds.len() - keep_idx.len();
    let keep_count = keep_idx.len();
    let impossible = || DatasetError::BalanceImpossible {
        ratio,
        do_count,
        keep_count,
    };
    if !(0.0..=1.0).contains(&ratio) {
        return Err(impossible());
    }
    if ratio == 0.0 {
        return Ok(BTreeSet::new());
    }
    let target = if do_count == 0 {
        if ratio == 1.0 || keep_count == 0 {
            keep_count
        } else {
            return Err(impossible());
        }
    } else if ratio == 1.0 {
        return Err(impossible());
    } else {
        let ideal = (ratio * do_count as f64 / (1.0 - ratio)).round() as usize;
        if ideal <= keep_count {
            ideal
        } else if (keep_count as f64 - ratio * (do_count + keep_count) as f64).abs() <= 1.0 {
            keep_count
        } else {
            return Err(impossible());
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, keep_count, target);
    Ok(picked.into_iter().map(|i| keep_idx[i]).collect())
}

/// Result of running the full build over one or more trajectories.
#[derive(Debug, Default)]
pub struct BuildOutput {
    pub instances: Vec<EditInstance>,
    /// Instances the judge could not classify, with the reason.
    pub quarantined: Vec<(EditInstance, String)>,
}

/// A recorded editing session: its initial text and the finalized deltas.
#[derive(Debug, Clone)]
pub struct SessionTrace {
    pub initial: CodeSnapshot,
    pub trajectory: EditTrajectory,
}

impl SessionTrace {
    pub fn snapshots(&self) -> Result<Vec<CodeSnapshot>, DatasetError> {
        let texts =
            self.trajectory
                .snapshots(&self.initial.text)
                .map_err(|e| DatasetError::Alignment {
                    index: 0,
                    reason: e.to_string(),
                })?;
        Ok(texts
            .into_iter()
            .map(|text| CodeSnapshot::new(text).with_language(self.initial.language.clone()))
            .collect())
    }
}

/// Formulation, labeling and ratio balancing over a set of sessions.
pub fn build_dataset(
    sessions: &[SessionTrace],
    judge: Option<&dyn CompletionBackend>,
    cfg: &DatasetConfig,
) -> Result<BuildOutput, DatasetError> {
    cfg.validate()?;
    let mut candidates = Vec::new();
    for session in sessions {
        let snapshots = session.snapshots()?;
        candidates.extend(formulate_instances(&session.trajectory, &snapshots, cfg)?);
    }

    let mut output = BuildOutput::default();
    let mut labeled = Vec::with_capacity(candidates.len());
    match cfg.labeling_mode {
        LabelingMode::LocationChange => {
            labeled.extend(candidates.into_iter().map(|c| label_instance(c, None, cfg)));
        }
        LabelingMode::RelevanceJudge => {
            let judge = judge.ok_or_else(|| {
                DatasetError::JudgeUnavailable("relevance_judge mode needs a judge backend".into())
            })?;
            let verdicts = exec::map_bounded(&candidates, cfg.judge_concurrency, |c| {
                judge_relevance(c, judge)
            });
            for (candidate, verdict) in candidates.into_iter().zip(verdicts) {
                match verdict {
                    Ok(v) => labeled.push(label_instance(candidate, Some(&v), cfg)),
                    Err(DatasetError::UnparseableVerdict(raw)) => output
                        .quarantined
                        .push((candidate, format!("unparseable verdict: {raw:?}"))),
                    Err(other) => return Err(other),
                }
            }
        }
    }
    output.instances = balance_keep_ratio(labeled, cfg)?;
    Ok(output)
}

/// Turns successive file versions (for example from version control) into an
/// event stream, one event per version change.
pub fn events_from_versions(versions: &[String], language: &str) -> Vec<EventRecord> {
    versions
        .windows(2)
        .enumerate()
        .map(|(i, pair)| EventRecord {
            ts: i as u64,
            pre: pair[0].clone(),
            post: pair[1].clone(),
            cursor_line: None,
            language: (!language.is_empty()).then(|| language.to_owned()),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub labeling_mode: LabelingMode,
    pub history_window: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub template_version: String,
}

impl DatasetMeta {
    pub fn from_config(cfg: &DatasetConfig) -> Self {
        DatasetMeta {
            labeling_mode: cfg.labeling_mode,
            history_window: cfg.history_window.max_edits(),
            seed: cfg.seed,
            template_version: TEMPLATE_VERSION.to_owned(),
        }
    }
}

/// One JSONL row of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub task: Task,
    pub language: String,
    pub current: String,
    pub cursor_line: usize,
    pub history: Vec<String>,
    pub label_kind: LabelKind,
    pub gt_location: Location,
    pub window_start: usize,
    pub window_pre: String,
    pub gt_edit: String,
    pub meta: DatasetMeta,
}

impl DatasetRecord {
    pub fn from_instance(instance: &EditInstance, task: Task, meta: &DatasetMeta) -> Self {
        DatasetRecord {
            task,
            language: instance.current.language.clone(),
            current: instance.current.text.clone(),
            cursor_line: instance.current.cursor_or_default(),
            history: instance.history.clone(),
            label_kind: instance.label_kind,
            gt_location: instance.gt_location,
            window_start: instance.window_start,
            window_pre: instance.window_pre.clone(),
            gt_edit: instance.gt_edit.clone(),
            meta: meta.clone(),
        }
    }

    pub fn snapshot(&self) -> CodeSnapshot {
        CodeSnapshot {
            text: self.current.clone(),
            cursor_line: Some(self.cursor_line),
            language: self.language.clone(),
        }
    }

    /// Label consistency: keep rows expect no jump and an untouched window,
    /// do rows expect a real change.
    pub fn check(&self) -> Result<(), String> {
        match self.label_kind {
            LabelKind::Keep if self.gt_location != Location::Keep => {
                Err("keep sample must have gt_location \"keep\"".into())
            }
            LabelKind::Keep if self.gt_edit != self.window_pre => {
                Err("keep sample must have gt_edit equal to window_pre".into())
            }
            LabelKind::Do if self.gt_location == Location::Keep => {
                Err("do sample cannot have gt_location \"keep\"".into())
            }
            LabelKind::Do if self.gt_edit == self.window_pre => {
                Err("do sample must change the window".into())
            }
            _ => Ok(()),
        }
    }
}

pub fn to_records(
    instances: &[EditInstance],
    tasks: &[Task],
    meta: &DatasetMeta,
) -> Vec<DatasetRecord> {
    instances
        .iter()
        .flat_map(|inst| {
            tasks
                .iter()
                .map(|t| DatasetRecord::from_instance(inst, *t, meta))
        })
        .collect()
}

pub fn write_records(
    mut writer: impl Write,
    records: &[DatasetRecord],
) -> Result<usize, DatasetError> {
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(records.len())
}

pub fn write_dataset(records: &[DatasetRecord], path: &Path) -> Result<usize, DatasetError> {
    let file = std::fs::File::create(path)?;
    write_records(BufWriter::new(file), records)
}

pub fn read_records(reader: impl BufRead) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| DatasetError::Schema {
            line: idx + 1,
            message,
        };
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        record.check().map_err(schema)?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_records(std::io::BufReader::new(file))
}
