//! Replays dataset records against a completion backend and aggregates
//! do/keep metrics per language.
//!
//! Scoring rules:
//! - location task: a sample is correct iff the parsed location equals the
//!   ground truth (line number or keep token). Output that cannot be parsed
//!   counts as a keep prediction.
//! - edit task, do samples: ES and exact match against `gt_edit`.
//! - edit task, keep samples: correct iff the returned window is
//!   byte-identical to `window_pre`.
//!
//! Backend and prompt failures are counted per sample and never scored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetRecord, LabelKind, LabelingMode, Task};
use crate::exec;
use crate::metrics::{aggregate, reward_edit, round_half_up, SampleScore, Split, Summary};
use crate::model_io::{
    build_edit_prompt, build_location_prompt, parse_edit_output, parse_location_output,
    CompletionBackend, ModelIoError, PromptBundle, PromptConfig, ScriptedBackend,
};
use crate::trajectory::HistoryWindow;
use crate::Location;

pub const DEFAULT_EVAL_CONCURRENCY: usize = 4;
pub const AVERAGE_LABEL: &str = "Average";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("dataset has no {task} records")]
    TaskMismatch { task: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    pub task: Task,
    /// Re-window each sample's history to this many entries. Records only
    /// carry the history they were built with, so a larger K than the
    /// dataset's has no extra effect.
    pub history_override: Option<HistoryWindow>,
    pub concurrency: usize,
    pub prompt_budget_bytes: usize,
}

impl EvalConfig {
    pub fn new(task: Task) -> Self {
        EvalConfig {
            task,
            history_override: None,
            concurrency: DEFAULT_EVAL_CONCURRENCY,
            prompt_budget_bytes: PromptConfig::default().budget_bytes,
        }
    }

    pub fn with_history(mut self, k: HistoryWindow) -> Self {
        self.history_override = Some(k);
        self
    }

    pub fn with_concurrency(mut self, concurrency: usize) -> Self {
        self.concurrency = concurrency.max(1);
        self
    }

    fn prompt_config(&self, record: &DatasetRecord) -> PromptConfig {
        let history_window = self.history_override.unwrap_or_else(|| {
            HistoryWindow::new(record.meta.history_window.max(record.history.len()).max(1))
                .expect("window is at least 1")
        });
        PromptConfig {
            history_window,
            budget_bytes: self.prompt_budget_bytes,
        }
    }
}

/// The prompt sent for `record` under `cfg`. Exposed so mocks can be keyed
/// by exactly the prompts an evaluation will issue.
pub fn sample_prompt(
    record: &DatasetRecord,
    cfg: &EvalConfig,
) -> Result<PromptBundle, ModelIoError> {
    let pcfg = cfg.prompt_config(record);
    match cfg.task {
        Task::Location => build_location_prompt(&record.snapshot(), &record.history, &pcfg),
        Task::Edit => {
            let mut snapshot = record.snapshot();
            if let Location::Line(line) = record.gt_location {
                snapshot.cursor_line = Some(line);
            }
            build_edit_prompt(
                &snapshot,
                &record.history,
                record.window_start,
                &record.window_pre,
                &pcfg,
            )
        }
    }
}

/// What happened to one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub index: usize,
    pub language: String,
    pub split: Split,
    pub result: Result<SampleScore, String>,
    pub latency_ms: f64,
}

pub fn score_sample(
    record: &DatasetRecord,
    backend: &dyn CompletionBackend,
    cfg: &EvalConfig,
) -> (Result<SampleScore, String>, f64) {
    let prompt = match sample_prompt(record, cfg) {
        Ok(p) => p,
        Err(e) => return (Err(e.to_string()), 0.0),
    };
    let completion = match backend.complete(&prompt) {
        Ok(c) => c,
        Err(e) => return (Err(e.to_string()), 0.0),
    };
    let latency = completion.latency_ms;
    let score = match cfg.task {
        Task::Location => {
            let predicted = parse_location_output(&completion.text).unwrap_or(Location::Keep);
            SampleScore::Hit(predicted == record.gt_location)
        }
        Task::Edit => {
            let window = match parse_edit_output(&completion.text, &record.window_pre) {
                Ok(parsed) => parsed.window,
                Err(ModelIoError::EmptyOutput) => String::new(),
                Err(e) => return (Err(e.to_string()), latency),
            };
            match record.label_kind {
                LabelKind::Do => SampleScore::Edit(reward_edit(&window, &record.gt_edit)),
                LabelKind::Keep => SampleScore::Hit(window == record.window_pre),
            }
        }
    };
    (Ok(score), latency)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub language: String,
    pub split: Split,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub index: usize,
    pub message: String,
}

/// Per-request wall-clock statistics. Kept out of emitted reports so that
/// reports stay byte-identical across runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pick = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
        LatencyStats {
            count: sorted.len(),
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50_ms: pick(0.5),
            p95_ms: pick(0.95),
            max_ms: *sorted.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub backend: String,
    /// K used for prompts; `None` means each record's own history.
    pub history_window: Option<usize>,
    pub labeling_mode: Option<LabelingMode>,
    pub n_dataset: usize,
    pub n_scored: usize,
    pub n_errors: usize,
    /// Sorted by language, then split.
    pub cells: Vec<CellReport>,
    /// Unweighted mean of the per-language cells, per split.
    pub average: Vec<CellReport>,
    pub errors: Vec<SampleError>,
    #[serde(skip)]
    pub latency: LatencyStats,
    #[serde(skip)]
    pub wall_ms: f64,
}

impl EvalReport {
    pub fn cell(&self, language: &str, split: Split) -> Option<&Summary> {
        self.cells
            .iter()
            .chain(&self.average)
            .find(|c| c.language == language && c.split == split)
            .map(|c| &c.summary)
    }

    pub fn languages(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.cells.iter().map(|c| c.language.as_str()).collect();
        set.into_iter().collect()
    }

    pub fn error_rate(&self) -> f64 {
        if self.n_dataset == 0 {
            0.0
        } else {
            self.n_errors as f64 / self.n_dataset as f64
        }
    }
}

/// Evaluates every record of the configured task.
pub fn run_eval(
    records: &[DatasetRecord],
    backend: &dyn CompletionBackend,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let started = Instant::now();
    let selected: Vec<(usize, &DatasetRecord)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.task == cfg.task)
        .collect();
    if selected.is_empty() {
        return Err(EvalError::TaskMismatch {
            task: cfg.task.as_str(),
        });
    }

    let outcomes = exec::map_bounded(&selected, cfg.concurrency, |(index, record)| {
        let (result, latency_ms) = score_sample(record, backend, cfg);
        SampleOutcome {
            index: *index,
            language: record.language.clone(),
            split: record.label_kind.split(),
            result,
            latency_ms,
        }
    });

    let mut report = summarize(&outcomes, cfg.task, backend.id());
    report.history_window = cfg.history_override.map(|k| k.max_edits());
    let modes: BTreeSet<_> = selected
        .iter()
        .map(|(_, r)| r.meta.labeling_mode.as_str())
        .collect();
    if modes.len() == 1 {
        report.labeling_mode = Some(selected[0].1.meta.labeling_mode);
    }
    report.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

/// Aggregation over collected outcomes; independent of outcome order.
pub fn summarize(outcomes: &[SampleOutcome], task: Task, backend: String) -> EvalReport {
    let mut groups: BTreeMap<(String, Split), Vec<SampleScore>> = BTreeMap::new();
    let mut errors = Vec::new();
    let mut latencies = Vec::new();
    for outcome in outcomes {
        match &outcome.result {
            Ok(score) => {
                latencies.push(outcome.latency_ms);
                groups
                    .entry((outcome.language.clone(), outcome.split))
                    .or_default()
                    .push(*score);
            }
            Err(message) => errors.push(SampleError {
                index: outcome.index,
                message: message.clone(),
            }),
        }
    }
    errors.sort_by_key(|e| e.index);

    let cells: Vec<CellReport> = groups
        .into_iter()
        .map(|((language, split), scores)| CellReport {
            summary: aggregate(&scores, split).expect("groups are nonempty"),
            language,
            split,
        })
        .collect();
    let average = [Split::Do, Split::Keep]
        .into_iter()
        .filter_map(|split| average_cell(&cells, split))
        .collect();

    EvalReport {
        task,
        backend,
        history_window: None,
        labeling_mode: None,
        n_dataset: outcomes.len(),
        n_scored: outcomes.len() - errors.len(),
        n_errors: errors.len(),
        cells,
        average,
        errors,
        latency: LatencyStats::from_samples(&latencies),
        wall_ms: 0.0,
    }
}

fn average_cell(cells: &[CellReport], split: Split) -> Option<CellReport> {
    let cells: Vec<&Summary> = cells
        .iter()
        .filter(|c| c.split == split)
        .map(|c| &c.summary)
        .collect();
    if cells.is_empty() {
        return None;
    }
    let mean = |field: fn(&Summary) -> Option<f64>| {
        let values: Vec<f64> = cells.iter().filter_map(|c| field(c)).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    Some(CellReport {
        language: AVERAGE_LABEL.to_owned(),
        split,
        summary: Summary {
            n: cells.iter().map(|c| c.n).sum(),
            acc: mean(|s| s.acc),
            es: mean(|s| s.es),
            emr: mean(|s| s.emr),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// Renders one report. Timing is left out so output is reproducible.
pub fn emit_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => markdown_table(&[(report.backend.clone(), report)]),
        ReportFormat::Csv => csv_table(&[report]),
        ReportFormat::Json => {
            let mut out = serde_json::to_string_pretty(report).expect("report serializes");
            out.push('\n');
            out
        }
    }
}

/// Renders several reports (for example a K sweep) as one table, one row or
/// block per report.
pub fn emit_sweep(reports: &[(String, EvalReport)], format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => {
            let rows: Vec<(String, &EvalReport)> = reports
                .iter()
                .map(|(label, r)| (label.clone(), r))
                .collect();
            markdown_table(&rows)
        }
        ReportFormat::Csv => csv_table(&reports.iter().map(|(_, r)| r).collect::<Vec<_>>()),
        ReportFormat::Json => {
            let map: BTreeMap<&str, &EvalReport> =
                reports.iter().map(|(l, r)| (l.as_str(), r)).collect();
            let mut out = serde_json::to_string_pretty(&map).expect("reports serialize");
            out.push('\n');
            out
        }
    }
}

fn markdown_table(rows: &[(String, &EvalReport)]) -> String {
    let languages: BTreeSet<&str> = rows.iter().flat_map(|(_, r)| r.languages()).collect();
    let columns: Vec<&str> = languages
        .into_iter()
        .chain(std::iter::once(AVERAGE_LABEL))
        .collect();
    let task = rows.first().map(|(_, r)| r.task).unwrap_or(Task::Location);
    let do_header = match task {
        Task::Location => "-do Acc",
        Task::Edit => "-do ES/EMR",
    };

    let mut out = String::from("| Model |");
    for col in &columns {
        let _ = write!(out, " {col} {do_header} | {col} -keep Acc |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|---|".repeat(columns.len()));
    out.push('\n');
    for (label, report) in rows {
        let _ = write!(out, "| {label} |");
        for col in &columns {
            for split in [Split::Do, Split::Keep] {
                let cell = report.cell(col, split).map(format_summary);
                let _ = write!(out, " {} |", cell.as_deref().unwrap_or("-"));
            }
        }
        out.push('\n');
    }
    out
}

fn format_summary(s: &Summary) -> String {
    match (s.es, s.emr, s.acc) {
        (Some(es), Some(emr), _) => {
            format!("{:.2}/{:.1}%", round_half_up(es, 2), round_half_up(emr, 1))
        }
        (_, _, Some(acc)) => format!("{:.1}%", round_half_up(acc, 1)),
        _ => "-".to_owned(),
    }
}

pub const CSV_HEADER: &str = "backend,task,history_window,language,split,n,acc,es,emr";

fn csv_table(reports: &[&EvalReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for report in reports {
        let k = report
            .history_window
            .map(|k| k.to_string())
            .unwrap_or_default();
        for cell in report.cells.iter().chain(&report.average) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                csv_field(&report.backend),
                report.task.as_str(),
                k,
                csv_field(&cell.language),
                cell.split.as_str(),
                cell.summary.n,
                opt(cell.summary.acc),
                opt(cell.summary.es),
                opt(cell.summary.emr),
            );
        }
    }
    out
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_owned()
    }
}

/// Canned responses a mock should give for each record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockPolicy {
    /// Answers the ground truth.
    Oracle,
    /// Never jumps and never edits.
    NeverEdit,
}

/// Scripted backend keyed by the exact prompts `run_eval` will send.
pub fn scripted_for_records(
    records: &[DatasetRecord],
    cfg: &EvalConfig,
    policy: MockPolicy,
) -> Result<ScriptedBackend, ModelIoError> {
    let name = match policy {
        MockPolicy::Oracle => "oracle",
        MockPolicy::NeverEdit => "never-edit",
    };
    let mut backend = ScriptedBackend::new(name);
    for record in records.iter().filter(|r| r.task == cfg.task) {
        let prompt = sample_prompt(record, cfg)?;
        let response = match (cfg.task, policy) {
            (Task::Location, MockPolicy::Oracle) => location_answer(record.gt_location),
            (Task::Location, MockPolicy::NeverEdit) => location_answer(Location::Keep),
            (Task::Edit, MockPolicy::Oracle) => fenced(&record.gt_edit),
            (Task::Edit, MockPolicy::NeverEdit) => fenced(&record.window_pre),
        };
        backend.insert(&prompt, response);
    }
    Ok(backend)
}

fn location_answer(location: Location) -> String {
    match location {
        Location::Line(n) => format!("LINE {n}"),
        Location::Keep => "KEEP".to_owned(),
    }
}

fn fenced(body: &str) -> String {
    format!("```\n{body}\n```")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetMeta;
    use crate::model_io::{BackendError, Completion};

    fn record(task: Task, kind: LabelKind, language: &str) -> DatasetRecord {
        let (gt_location, gt_edit) = match kind {
            LabelKind::Do => (Location::Line(2), "b2\nc".to_owned()),
            LabelKind::Keep => (Location::Keep, "b\nc".to_owned()),
        };
        DatasetRecord {
            task,
            language: language.to_owned(),
            current: "a\nb\nc\nd".to_owned(),
            cursor_line: if kind == LabelKind::Do { 1 } else { 3 },
            history: vec!["1-| x\n1+| a".to_owned()],
            label_kind: kind,
            gt_location,
            window_start: 2,
            window_pre: "b\nc".to_owned(),
            gt_edit,
            meta: DatasetMeta {
                labeling_mode: LabelingMode::LocationChange,
                history_window: 3,
                seed: 0,
                template_version: String::new(),
            },
        }
    }

    fn corpus(task: Task) -> Vec<DatasetRecord> {
        vec![
            record(task, LabelKind::Do, "Python"),
            record(task, LabelKind::Keep, "Python"),
            record(task, LabelKind::Do, "Rust"),
            record(task, LabelKind::Keep, "Rust"),
        ]
    }

    #[test]
    fn oracle_and_never_edit() {
        for task in [Task::Location, Task::Edit] {
            let records = corpus(task);
            let cfg = EvalConfig::new(task);
            let oracle = scripted_for_records(&records, &cfg, MockPolicy::Oracle).unwrap();
            let report = run_eval(&records, &oracle, &cfg).unwrap();
            assert_eq!(report.n_errors, 0);
            let do_cell = report.cell("Python", Split::Do).unwrap();
            match task {
                Task::Location => assert_eq!(do_cell.acc, Some(100.0)),
                Task::Edit => {
                    assert_eq!(do_cell.es, Some(100.0));
                    assert_eq!(do_cell.emr, Some(100.0));
                }
            }
            assert_eq!(report.cell("Rust", Split::Keep).unwrap().acc, Some(100.0));

            let never = scripted_for_records(&records, &cfg, MockPolicy::NeverEdit).unwrap();
            let report = run_eval(&records, &never, &cfg).unwrap();
            assert_eq!(
                report.cell(AVERAGE_LABEL, Split::Keep).unwrap().acc,
                Some(100.0)
            );
            let do_cell = report.cell(AVERAGE_LABEL, Split::Do).unwrap();
            assert_eq!(do_cell.emr.or(do_cell.acc), Some(0.0));
        }
    }

    struct Failing;

    impl CompletionBackend for Failing {
        fn id(&self) -> String {
            "failing".into()
        }

        fn complete(&self, _: &PromptBundle) -> Result<Completion, BackendError> {
            Err(BackendError::Timeout { after_ms: 1 })
        }
    }

    #[test]
    fn errors_are_counted() {
        let records = corpus(Task::Location);
        let report = run_eval(&records, &Failing, &EvalConfig::new(Task::Location)).unwrap();
        assert_eq!(report.n_errors, 4);
        assert_eq!(report.n_scored + report.n_errors, report.n_dataset);
        assert!(report.cells.is_empty());
        assert_eq!(report.error_rate(), 1.0);
    }

    #[test]
    fn task_mismatch() {
        let records = corpus(Task::Edit);
        assert!(matches!(
            run_eval(&records, &Failing, &EvalConfig::new(Task::Location)),
            Err(EvalError::TaskMismatch { .. })
        ));
    }

    #[test]
    fn markdown_layout() {
        let records = corpus(Task::Edit);
        let cfg = EvalConfig::new(Task::Edit);
        let oracle = scripted_for_records(&records[..3], &cfg, MockPolicy::Oracle).unwrap();
        let report = run_eval(&records[..3], &oracle, &cfg).unwrap();
        let md = emit_report(&report, ReportFormat::Markdown);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(
            lines[0],
            "| Model | Python -do ES/EMR | Python -keep Acc | Rust -do ES/EMR | Rust -keep Acc \
             | Average -do ES/EMR | Average -keep Acc |"
        );
        assert_eq!(
            lines[2],
            "| scripted:oracle | 100.00/100.0% | 100.0% | 100.00/100.0% | - | 100.00/100.0% | 100.0% |"
        );
    }

    #[test]
    fn average_is_unweighted() {
        let cells = vec![
            CellReport {
                language: "A".into(),
                split: Split::Keep,
                summary: Summary {
                    n: 1,
                    acc: Some(100.0),
                    ..Default::default()
                },
            },
            CellReport {
                language: "B".into(),
                split: Split::Keep,
                summary: Summary {
                    n: 3,
                    acc: Some(0.0),
                    ..Default::default()
                },
            },
        ];
        let avg = average_cell(&cells, Split::Keep).unwrap();
        assert_eq!(avg.summary.acc, Some(50.0));
        assert_eq!(avg.summary.n, 4);
        assert!(average_cell(&cells, Split::Do).is_none());
    }

    #[test]
    fn latency_stats() {
        let stats = LatencyStats::from_samples(&[3.0, 1.0, 2.0]);
        assert_eq!(stats.p50_ms, 2.0);
        assert_eq!(stats.max_ms, 3.0);
        assert_eq!(LatencyStats::from_samples(&[]).count, 0);
    }
}
