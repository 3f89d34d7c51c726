//! Seeded generators for synthetic texts, edit streams and datasets.
//!
//! Used by property tests, benchmarks and smoke runs where no real editing
//! logs are at hand. Everything is a pure function of the RNG state.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::dataset::{
    balance_keep_ratio, formulate_instances, label_instance, to_records, DatasetConfig,
    DatasetMeta, DatasetRecord, LabelKind, SessionTrace, Task,
};
use crate::diff::{join_lines, split_lines, CodeSnapshot};
use crate::trajectory::TrajectoryState;

/// Small vocabulary so random texts share many lines and diffs stay
/// interesting (lots of equal lines to align).
const VOCAB: &[&str] = &[
    "",
    "{",
    "}",
    "    return x;",
    "    x += 1;",
    "fn main() {",
    "let a = 1;",
    "let b = 2;",
    "  // note",
    "print(\"hi\")",
    "\tindented",
    "end",
];

pub fn random_line(rng: &mut impl Rng) -> String {
    if rng.random_bool(0.7) {
        (*VOCAB.choose(rng).expect("vocabulary is non-empty")).to_owned()
    } else {
        let len = rng.random_range(1..12);
        (0..len)
            .map(|_| rng.random_range(b'a'..=b'e') as char)
            .collect()
    }
}

/// A text of up to `max_lines` lines, with or without a final newline.
pub fn random_text(rng: &mut impl Rng, max_lines: usize) -> String {
    let n = rng.random_range(0..=max_lines);
    let lines: Vec<String> = (0..n).map(|_| random_line(rng)).collect();
    join_lines(&lines, n > 0 && rng.random_bool(0.5))
}

/// Applies a handful of random line edits (insert, delete, replace, move) and
/// occasionally toggles the final newline. The result stays under
/// `max_lines` lines.
pub fn mutate(rng: &mut impl Rng, text: &str, max_lines: usize) -> String {
    let (lines, nl) = split_lines(text);
    let mut lines: Vec<String> = lines.into_iter().map(str::to_owned).collect();
    let ops = rng.random_range(1..=6);
    for _ in 0..ops {
        match rng.random_range(0..4) {
            0 if lines.len() < max_lines => {
                let at = rng.random_range(0..=lines.len());
                let count = rng.random_range(1..=3).min(max_lines - lines.len());
                for _ in 0..count {
                    lines.insert(at, random_line(rng));
                }
            }
            1 if !lines.is_empty() => {
                let at = rng.random_range(0..lines.len());
                let count = rng.random_range(1..=3).min(lines.len() - at);
                lines.drain(at..at + count);
            }
            2 if !lines.is_empty() => {
                let at = rng.random_range(0..lines.len());
                lines[at] = random_line(rng);
            }
            3 if lines.len() > 1 => {
                let from = rng.random_range(0..lines.len());
                let line = lines.remove(from);
                let to = rng.random_range(0..=lines.len());
                lines.insert(to, line);
            }
            _ => {}
        }
    }
    let nl = if rng.random_bool(0.1) { !nl } else { nl };
    join_lines(&lines, nl && !lines.is_empty())
}

/// A (pre, post) pair of at most `max_lines` lines each.
pub fn random_pair(rng: &mut impl Rng, max_lines: usize) -> (String, String) {
    let pre = random_text(rng, max_lines);
    let post = if rng.random_bool(0.05) {
        random_text(rng, max_lines)
    } else {
        mutate(rng, &pre, max_lines)
    };
    (pre, post)
}

/// Replaces `line` (1-based) with `content`, keeping the final newline.
pub fn replace_line(text: &str, line: usize, content: &str) -> String {
    let (mut lines, nl) = split_lines(text);
    lines[line - 1] = content;
    join_lines(&lines, nl)
}

/// An editing session: initial text plus successive file states. Edits
/// cluster around a moving focus line so that some consecutive events
/// overlap (and merge) while others jump elsewhere. Some events are no-ops.
pub fn random_event_stream(rng: &mut impl Rng, max_events: usize) -> (String, Vec<String>) {
    let initial = {
        let n = rng.random_range(5..40);
        let lines: Vec<String> = (0..n).map(|_| random_line(rng)).collect();
        join_lines(&lines, rng.random_bool(0.5))
    };
    let mut states = Vec::new();
    let mut current = initial.clone();
    let mut focus = 1usize;
    for _ in 0..rng.random_range(1..=max_events) {
        let (lines, nl) = split_lines(&current);
        let mut lines: Vec<String> = lines.into_iter().map(str::to_owned).collect();
        if rng.random_bool(0.25) || lines.is_empty() {
            focus = rng.random_range(1..=lines.len().max(1));
        }
        let at = focus.clamp(1, lines.len().max(1)) - 1;
        match rng.random_range(0..10) {
            // Typing on the focus line.
            0..=4 if !lines.is_empty() => {
                let c = rng.random_range(b'a'..=b'z') as char;
                lines[at].push(c);
            }
            5 if !lines.is_empty() => {
                lines[at].pop();
            }
            6 => {
                lines.insert(at.min(lines.len()), random_line(rng));
            }
            7 if lines.len() > 1 => {
                lines.remove(at);
            }
            8 => {
                // No-op event.
            }
            _ => {
                if let Some(line) = lines.get_mut(at) {
                    *line = random_line(rng);
                } else {
                    lines.push(random_line(rng));
                }
            }
        }
        current = join_lines(&lines, nl);
        states.push(current.clone());
    }
    (initial, states)
}

/// Runs an event stream through a trajectory state and returns the session.
pub fn session_from_states(initial: &str, states: &[String], language: &str) -> SessionTrace {
    let mut state = TrajectoryState::new(initial);
    for post in states {
        state
            .ingest_text(post)
            .expect("states are consecutive by construction");
    }
    SessionTrace {
        initial: CodeSnapshot::new(initial).with_language(language),
        trajectory: state.finalize(),
    }
}

/// A session of `edits` single-line edits on a numbered file, alternating
/// between lines close to the previous edit and lines far away. With the
/// location-change labeling mode the close ones become keep candidates.
pub fn scattered_session(rng: &mut impl Rng, edits: usize, language: &str) -> SessionTrace {
    let total: usize = 200;
    let initial = join_lines(
        &(1..=total)
            .map(|i| format!("{language} line {i}"))
            .collect::<Vec<_>>(),
        true,
    );
    let mut states = Vec::with_capacity(edits);
    let mut text = initial.clone();
    let mut line = rng.random_range(1..=total);
    for i in 0..edits {
        line = if rng.random_bool(0.45) {
            // Near the previous edit but never adjacent, so edits stay separate.
            let step = rng.random_range(3..=10);
            if line + step <= total {
                line + step
            } else {
                line - step
            }
        } else {
            loop {
                let far: usize = rng.random_range(1..=total);
                if far.abs_diff(line) > 40 {
                    break far;
                }
            }
        };
        text = replace_line(&text, line, &format!("edit {i} at {line}"));
        states.push(text.clone());
    }
    session_from_states(&initial, &states, language)
}

/// A labeled, balanced dataset of roughly `target` instances per task across
/// the given languages, built through the regular pipeline.
pub fn synthetic_dataset(
    rng: &mut impl Rng,
    target: usize,
    languages: &[&str],
    tasks: &[Task],
    cfg: &DatasetConfig,
) -> Vec<DatasetRecord> {
    let meta = DatasetMeta::from_config(cfg);
    let mut instances = Vec::new();
    let mut guard = 0;
    while instances.len() < target && guard < 10_000 {
        guard += 1;
        let language = languages[guard % languages.len()];
        let session = scattered_session(rng, 12, language);
        let snapshots = session.snapshots().expect("session replays");
        let formed = formulate_instances(&session.trajectory, &snapshots, cfg)
            .expect("synthetic sessions align");
        let labeled: Vec<_> = formed
            .into_iter()
            .map(|inst| label_instance(inst, None, cfg))
            .collect();
        // Keep the ratio balanced within each language batch.
        let balanced = match balance_keep_ratio(labeled.clone(), cfg) {
            Ok(b) => b,
            Err(_) => labeled
                .into_iter()
                .filter(|i| i.label_kind == LabelKind::Do)
                .collect(),
        };
        instances.extend(balanced);
    }
    instances.truncate(target);
    to_records(&instances, tasks, &meta)
}
