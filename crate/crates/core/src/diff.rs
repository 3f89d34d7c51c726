//! Line-level diffs between two file states and the NES diff text format.
//!
//! A [`DeltaScript`] describes one contiguous edit region. Lines before the
//! region are identical in both texts, so the region starts at the same line
//! number in pre- and post-coordinates. Every line inside the region appears
//! as a hunk: changed lines as deletions/insertions, unchanged interior lines
//! as context. There is never context outside the first and last change.
//!
//! Rendered form, one row per hunk:
//!
//! ```text
//! 1-| def Hello()
//! 1+| def GoodBye()
//! 2 |   print("Say")
//! 3-|   print("Hello")
//! 3+|   print("GoodBye")
//! ```
//!
//! Deletions and context rows carry pre-edit numbering, insertions carry
//! post-edit numbering.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffError {
    #[error("region mismatch at lines {start}-{end}: {reason}")]
    RegionMismatch {
        start: usize,
        end: usize,
        reason: String,
    },
    #[error("malformed NES diff row at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("inconsistent NES diff numbering at line {line}: {reason}")]
    Numbering { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HunkKind {
    Delete,
    Insert,
    Context,
}

impl HunkKind {
    fn marker(self) -> char {
        match self {
            HunkKind::Delete => '-',
            HunkKind::Insert => '+',
            HunkKind::Context => ' ',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LineHunk {
    pub kind: HunkKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_line: Option<usize>,
    pub content: String,
}

impl LineHunk {
    /// The line number shown in the NES format for this row.
    pub fn display_line(&self) -> usize {
        match self.kind {
            HunkKind::Insert => self.post_line.unwrap_or_default(),
            HunkKind::Delete | HunkKind::Context => self.pre_line.unwrap_or_default(),
        }
    }
}

/// Inclusive 1-based line range. A range with `end + 1 == start` is empty and
/// denotes the position just before line `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LineRange {
    pub start: usize,
    pub end: usize,
}

impl LineRange {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start >= 1 && end + 1 >= start);
        LineRange { start, end }
    }

    pub fn empty_at(start: usize) -> Self {
        LineRange {
            start,
            end: start - 1,
        }
    }

    pub fn with_len(start: usize, len: usize) -> Self {
        LineRange {
            start,
            end: start + len - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end + 1 == self.start
    }

    pub fn contains(&self, line: usize) -> bool {
        line >= self.start && line <= self.end
    }

    /// Inclusive bounds used for proximity tests. An empty range sits between
    /// two lines and touches both of them.
    pub fn touch_bounds(&self) -> (usize, usize) {
        if self.is_empty() {
            (self.start.saturating_sub(1), self.start)
        } else {
            (self.start, self.end)
        }
    }

    /// Number of lines separating two ranges; zero or less means they share
    /// (or touch, for empty ranges) at least one line.
    pub fn distance(&self, other: &LineRange) -> isize {
        let (a0, a1) = self.touch_bounds();
        let (b0, b1) = other.touch_bounds();
        a0.max(b0) as isize - a1.min(b1) as isize
    }

    fn offset(self, by: usize) -> Self {
        LineRange {
            start: self.start + by,
            end: self.end + by,
        }
    }
}

impl fmt::Display for LineRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

/// One contiguous edit region between two file states.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeltaScript {
    pub hunks: Vec<LineHunk>,
    pub pre_range: LineRange,
    pub post_range: LineRange,
    pub pre_region: String,
    pub post_region: String,
    /// Whether the post text ends with a newline, when that differs from the
    /// pre text. Not representable in the NES format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_newline: Option<bool>,
}

impl DeltaScript {
    pub fn empty() -> Self {
        DeltaScript {
            hunks: Vec::new(),
            pre_range: LineRange::empty_at(1),
            post_range: LineRange::empty_at(1),
            pre_region: String::new(),
            post_region: String::new(),
            final_newline: None,
        }
    }

    /// True when applying the delta changes nothing.
    pub fn is_empty(&self) -> bool {
        self.final_newline.is_none() && !self.has_changes()
    }

    pub fn has_changes(&self) -> bool {
        self.hunks.iter().any(|h| h.kind != HunkKind::Context)
    }

    pub fn change_count(&self) -> usize {
        self.hunks
            .iter()
            .filter(|h| h.kind != HunkKind::Context)
            .count()
    }

    /// Net change in file length, in lines.
    pub fn line_delta(&self) -> isize {
        self.post_range.len() as isize - self.pre_range.len() as isize
    }

    pub fn pre_lines(&self) -> Vec<&str> {
        region_lines(&self.pre_region, self.pre_range.len())
    }

    pub fn post_lines(&self) -> Vec<&str> {
        region_lines(&self.post_region, self.post_range.len())
    }

    /// Moves the delta `by` lines further down the file.
    pub fn shifted(mut self, by: usize) -> Self {
        if by == 0 {
            return self;
        }
        self.pre_range = self.pre_range.offset(by);
        self.post_range = self.post_range.offset(by);
        for hunk in &mut self.hunks {
            hunk.pre_line = hunk.pre_line.map(|n| n + by);
            hunk.post_line = hunk.post_line.map(|n| n + by);
        }
        self
    }
}

fn region_lines(region: &str, len: usize) -> Vec<&str> {
    if len == 0 {
        Vec::new()
    } else {
        region.split('\n').collect()
    }
}

/// Splits text into lines. A single trailing `'\n'` terminates the last line
/// rather than starting a new one; the flag reports whether it was present.
pub fn split_lines(text: &str) -> (Vec<&str>, bool) {
    if text.is_empty() {
        return (Vec::new(), false);
    }
    match text.strip_suffix('\n') {
        Some(body) => (body.split('\n').collect(), true),
        None => (text.split('\n').collect(), false),
    }
}

pub fn join_lines<S: AsRef<str>>(lines: &[S], final_newline: bool) -> String {
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(line.as_ref());
    }
    if final_newline && !lines.is_empty() {
        out.push('\n');
    }
    out
}

/// Number of lines in a file; an empty file counts as one line.
pub fn line_count(text: &str) -> usize {
    split_lines(text).0.len().max(1)
}

/// Full contents of one file plus editor context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSnapshot {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cursor_line: Option<usize>,
    #[serde(default)]
    pub language: String,
}

impl CodeSnapshot {
    pub fn new(text: impl Into<String>) -> Self {
        CodeSnapshot {
            text: text.into(),
            cursor_line: None,
            language: String::new(),
        }
    }

    pub fn with_cursor(mut self, line: usize) -> Self {
        self.cursor_line = Some(line);
        self
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = language.into();
        self
    }

    pub fn line_count(&self) -> usize {
        line_count(&self.text)
    }

    /// Cursor clamped into the file, defaulting to the first line.
    pub fn cursor_or_default(&self) -> usize {
        self.cursor_line.unwrap_or(1).clamp(1, self.line_count())
    }

    pub fn is_cursor_valid(&self) -> bool {
        self.cursor_line
            .is_none_or(|c| c >= 1 && c <= self.line_count())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Equal,
    Delete,
    Insert,
}

/// Computes the minimal line-level delta turning `pre` into `post`.
pub fn compute_diff(pre: &str, post: &str) -> DeltaScript {
    let (a, a_nl) = split_lines(pre);
    let (b, b_nl) = split_lines(post);
    let mut delta = diff_lines(&a, &b);
    if a_nl != b_nl {
        delta.final_newline = Some(b_nl);
        if !delta.has_changes() {
            delta.pre_range = LineRange::empty_at(a.len() + 1);
            delta.post_range = LineRange::empty_at(b.len() + 1);
        }
    }
    delta
}

/// Delta between two line sequences, numbered from line 1.
pub fn diff_lines<S: AsRef<str> + PartialEq>(a: &[S], b: &[S]) -> DeltaScript {
    let ops = group_changes(edit_ops(a, b));
    build_delta(&ops, a, b)
}

fn edit_ops<S: PartialEq>(a: &[S], b: &[S]) -> Vec<Op> {
    let mut ops = Vec::with_capacity(a.len().max(b.len()));
    conquer(a, b, &mut ops);
    ops
}

/// Within every run of consecutive changes, deletions come first.
fn group_changes(ops: Vec<Op>) -> Vec<Op> {
    let mut out = Vec::with_capacity(ops.len());
    let mut i = 0;
    while i < ops.len() {
        if ops[i] == Op::Equal {
            out.push(Op::Equal);
            i += 1;
            continue;
        }
        let run_end = ops[i..]
            .iter()
            .position(|op| *op == Op::Equal)
            .map_or(ops.len(), |p| i + p);
        let run = &ops[i..run_end];
        let deletes = run.iter().filter(|op| **op == Op::Delete).count();
        out.extend(std::iter::repeat_n(Op::Delete, deletes));
        out.extend(std::iter::repeat_n(Op::Insert, run.len() - deletes));
        i = run_end;
    }
    out
}

fn build_delta<S: AsRef<str>>(ops: &[Op], a: &[S], b: &[S]) -> DeltaScript {
    let first = ops.iter().position(|op| *op != Op::Equal);
    let last = ops.iter().rposition(|op| *op != Op::Equal);
    let (Some(first), Some(last)) = (first, last) else {
        return DeltaScript::empty();
    };

    // Lines before the first change are shared, so both sides start together.
    let start = ops[..first].len() + 1;
    let mut pre_i = start - 1;
    let mut post_i = start - 1;
    let mut hunks = Vec::with_capacity(last - first + 1);
    let mut pre_lines = Vec::new();
    let mut post_lines = Vec::new();
    for op in &ops[first..=last] {
        match op {
            Op::Equal => {
                let content = a[pre_i].as_ref();
                hunks.push(LineHunk {
                    kind: HunkKind::Context,
                    pre_line: Some(pre_i + 1),
                    post_line: Some(post_i + 1),
                    content: content.to_owned(),
                });
                pre_lines.push(content);
                post_lines.push(content);
                pre_i += 1;
                post_i += 1;
            }
            Op::Delete => {
                let content = a[pre_i].as_ref();
                hunks.push(LineHunk {
                    kind: HunkKind::Delete,
                    pre_line: Some(pre_i + 1),
                    post_line: None,
                    content: content.to_owned(),
                });
                pre_lines.push(content);
                pre_i += 1;
            }
            Op::Insert => {
                let content = b[post_i].as_ref();
                hunks.push(LineHunk {
                    kind: HunkKind::Insert,
                    pre_line: None,
                    post_line: Some(post_i + 1),
                    content: content.to_owned(),
                });
                post_lines.push(content);
                post_i += 1;
            }
        }
    }

    DeltaScript {
        hunks,
        pre_range: LineRange::with_len(start, pre_lines.len()),
        post_range: LineRange::with_len(start, post_lines.len()),
        pre_region: pre_lines.join("\n"),
        post_region: post_lines.join("\n"),
        final_newline: None,
    }
}

// Linear-space Myers: trim shared ends, split the remainder at a middle
// snake, recurse on both halves.
fn conquer<S: PartialEq>(a: &[S], b: &[S], ops: &mut Vec<Op>) {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);

    ops.extend(std::iter::repeat_n(Op::Equal, prefix));
    if a.is_empty() {
        ops.extend(std::iter::repeat_n(Op::Insert, b.len()));
    } else if b.is_empty() {
        ops.extend(std::iter::repeat_n(Op::Delete, a.len()));
    } else {
        let snake = middle_snake(a, b);
        conquer(&a[..snake.x0], &b[..snake.y0], ops);
        ops.extend(std::iter::repeat_n(Op::Equal, snake.x1 - snake.x0));
        conquer(&a[snake.x1..], &b[snake.y1..], ops);
    }
    ops.extend(std::iter::repeat_n(Op::Equal, suffix));
}

struct Snake {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

/// Furthest-reaching x per diagonal, indexable by negative diagonals.
struct Frontier {
    offset: isize,
    xs: Vec<isize>,
}

impl Frontier {
    fn new(max_d: isize) -> Self {
        Frontier {
            offset: max_d + 1,
            xs: vec![0; (2 * max_d + 3) as usize],
        }
    }

    fn get(&self, k: isize) -> isize {
        self.xs[(k + self.offset) as usize]
    }

    fn set(&mut self, k: isize, x: isize) {
        self.xs[(k + self.offset) as usize] = x;
    }

    /// Starting x for diagonal `k` in round `d`: step down from `k + 1` or
    /// right from `k - 1`, whichever reaches further.
    fn advance_from(&self, k: isize, d: isize) -> isize {
        if k == -d || (k != d && self.get(k - 1) < self.get(k + 1)) {
            self.get(k + 1)
        } else {
            self.get(k - 1) + 1
        }
    }
}

fn middle_snake<S: PartialEq>(a: &[S], b: &[S]) -> Snake {
    let n = a.len() as isize;
    let m = b.len() as isize;
    let delta = n - m;
    let odd = delta & 1 == 1;
    let max_d = (n + m + 1) / 2;
    let mut forward = Frontier::new(max_d);
    let mut backward = Frontier::new(max_d);

    for d in 0..=max_d {
        let mut k = -d;
        while k <= d {
            let x0 = forward.advance_from(k, d);
            let y0 = x0 - k;
            let (mut x, mut y) = (x0, y0);
            while x < n && y < m && a[x as usize] == b[y as usize] {
                x += 1;
                y += 1;
            }
            forward.set(k, x);
            let kb = delta - k;
            if odd && kb >= -(d - 1) && kb < d && x + backward.get(kb) >= n {
                return Snake {
                    x0: x0 as usize,
                    y0: y0 as usize,
                    x1: x as usize,
                    y1: y as usize,
                };
            }
            k += 2;
        }

        let mut kb = -d;
        while kb <= d {
            let x0 = backward.advance_from(kb, d);
            let y0 = x0 - kb;
            let (mut x, mut y) = (x0, y0);
            while x < n && y < m && a[(n - x - 1) as usize] == b[(m - y - 1) as usize] {
                x += 1;
                y += 1;
            }
            backward.set(kb, x);
            let k = delta - kb;
            if !odd && k >= -d && k <= d && x + forward.get(k) >= n {
                return Snake {
                    x0: (n - x) as usize,
                    y0: (m - y) as usize,
                    x1: (n - x0) as usize,
                    y1: (m - y0) as usize,
                };
            }
            kb += 2;
        }
    }
    unreachable!("middle snake search always terminates by d = ceil((n + m) / 2)")
}

/// Applies `delta` to `pre`, checking that its pre-region is where it claims.
pub fn apply_diff(pre: &str, delta: &DeltaScript) -> Result<String, DiffError> {
    let (lines, pre_nl) = split_lines(pre);
    let range = delta.pre_range;
    let mismatch = |reason: String| DiffError::RegionMismatch {
        start: range.start,
        end: range.end,
        reason,
    };
    if range.start == 0 || range.end > lines.len() {
        return Err(mismatch(format!(
            "range outside file of {} lines",
            lines.len()
        )));
    }
    let expected = delta.pre_lines();
    let actual = &lines[range.start - 1..range.end];
    if expected.as_slice() != actual {
        return Err(mismatch("pre-region text differs from file".to_owned()));
    }

    let mut out: Vec<&str> = Vec::with_capacity(lines.len() + delta.post_range.len());
    out.extend_from_slice(&lines[..range.start - 1]);
    out.extend(delta.post_lines());
    out.extend_from_slice(&lines[range.end..]);
    Ok(join_lines(&out, delta.final_newline.unwrap_or(pre_nl)))
}

pub fn render_nes_diff(delta: &DeltaScript) -> String {
    let mut out = String::new();
    for (i, hunk) in delta.hunks.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&hunk.display_line().to_string());
        out.push(hunk.kind.marker());
        out.push_str("| ");
        out.push_str(&hunk.content);
    }
    out
}

/// Parses NES diff rows back into a delta. Blank input lines are skipped.
pub fn parse_nes_diff(text: &str) -> Result<DeltaScript, DiffError> {
    let mut rows = Vec::new();
    for (idx, raw) in text.split('\n').enumerate() {
        if raw.is_empty() {
            continue;
        }
        rows.push((idx + 1, parse_row(idx + 1, raw)?));
    }
    let Some(&(_, (start, _, _))) = rows.first() else {
        return Ok(DeltaScript::empty());
    };
    if start == 0 {
        return Err(DiffError::Numbering {
            line: rows[0].0,
            reason: "line numbers are 1-based".to_owned(),
        });
    }

    let mut pre_next = start;
    let mut post_next = start;
    let mut hunks = Vec::with_capacity(rows.len());
    let mut pre_lines = Vec::new();
    let mut post_lines = Vec::new();
    for (line, (n, kind, content)) in rows {
        let expected = if kind == HunkKind::Insert {
            post_next
        } else {
            pre_next
        };
        if n != expected {
            return Err(DiffError::Numbering {
                line,
                reason: format!("expected line {expected}, found {n}"),
            });
        }
        let (pre_line, post_line) = match kind {
            HunkKind::Delete => {
                pre_next += 1;
                pre_lines.push(content);
                (Some(n), None)
            }
            HunkKind::Insert => {
                post_next += 1;
                post_lines.push(content);
                (None, Some(n))
            }
            HunkKind::Context => {
                let post = post_next;
                pre_next += 1;
                post_next += 1;
                pre_lines.push(content);
                post_lines.push(content);
                (Some(n), Some(post))
            }
        };
        hunks.push(LineHunk {
            kind,
            pre_line,
            post_line,
            content: content.to_owned(),
        });
    }

    Ok(DeltaScript {
        hunks,
        pre_range: LineRange::with_len(start, pre_lines.len()),
        post_range: LineRange::with_len(start, post_lines.len()),
        pre_region: pre_lines.join("\n"),
        post_region: post_lines.join("\n"),
        final_newline: None,
    })
}

fn parse_row(line: usize, raw: &str) -> Result<(usize, HunkKind, &str), DiffError> {
    let format_err = |reason: &str| DiffError::Format {
        line,
        reason: reason.to_owned(),
    };
    let digits = raw.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return Err(format_err("missing line number"));
    }
    let n: usize = raw[..digits]
        .parse()
        .map_err(|_| format_err("line number out of range"))?;
    let rest = &raw[digits..];
    let kind = match rest.as_bytes().first() {
        Some(b'-') => HunkKind::Delete,
        Some(b'+') => HunkKind::Insert,
        Some(b' ') => HunkKind::Context,
        _ => return Err(format_err("marker must be one of '-', '+', ' '")),
    };
    let rest = &rest[1..];
    let Some(rest) = rest.strip_prefix('|') else {
        return Err(format_err("expected '|' after marker"));
    };
    // A row with empty content may have lost its trailing space.
    let content = if rest.is_empty() {
        rest
    } else {
        rest.strip_prefix(' ')
            .ok_or_else(|| format_err("expected a space after '|'"))?
    };
    Ok((n, kind, content))
}
