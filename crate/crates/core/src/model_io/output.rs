//! Parsers for raw model output.
//!
//! Location grammar: the first line that reads `LINE <n>` or `KEEP`
//! (case-insensitive, surrounding whitespace ignored).
//! Edit grammar: the first ``` fenced block, verbatim; without a fence the
//! whole output minus leading/trailing line breaks.

use super::ModelIoError;
use crate::Location;

pub fn parse_location_output(raw: &str) -> Result<Location, ModelIoError> {
    raw.lines()
        .find_map(parse_location_line)
        .ok_or_else(|| ModelIoError::UnparseableOutput(excerpt(raw)))
}

fn parse_location_line(line: &str) -> Option<Location> {
    let line = line.trim();
    if line.eq_ignore_ascii_case("keep") {
        return Some(Location::Keep);
    }
    let head = line.get(..4)?;
    if !head.eq_ignore_ascii_case("line") {
        return None;
    }
    let rest = &line[4..];
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    match rest.trim().parse::<usize>() {
        Ok(n) if n >= 1 => Some(Location::Line(n)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedEdit {
    pub window: String,
    /// The model returned the editable region unchanged.
    pub unchanged: bool,
}

pub fn parse_edit_output(raw: &str, window_pre: &str) -> Result<ParsedEdit, ModelIoError> {
    let window = extract_fenced(raw)
        .unwrap_or_else(|| raw.trim_matches(|c| c == '\n' || c == '\r').to_owned());
    if window.is_empty() && !raw.contains("```") {
        return Err(ModelIoError::EmptyOutput);
    }
    Ok(ParsedEdit {
        unchanged: window == window_pre,
        window,
    })
}

fn extract_fenced(raw: &str) -> Option<String> {
    let mut lines = raw.split('\n');
    lines.find(|l| l.trim_start().starts_with("```"))?;
    let mut body = Vec::new();
    for line in lines {
        if line.trim_start().starts_with("```") {
            return Some(body.join("\n"));
        }
        body.push(line.strip_suffix('\r').unwrap_or(line));
    }
    // Unterminated fence: keep what followed it.
    while body.last().is_some_and(|l| l.is_empty()) {
        body.pop();
    }
    Some(body.join("\n"))
}

fn excerpt(raw: &str) -> String {
    const MAX: usize = 120;
    match raw.char_indices().nth(MAX) {
        Some((idx, _)) => format!("{}…", &raw[..idx]),
        None => raw.to_owned(),
    }
}
