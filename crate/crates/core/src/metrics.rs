//! Suggestion scoring: edit similarity, exact match, location accuracy, and
//! the scalar rewards exported for RL trainers.
//!
//! Edit similarity (ES) is character-level normalized Levenshtein similarity:
//! `1 - lev(gen, gt) / max(|gen|, |gt|)`, counted in Unicode scalar values.
//! Two empty strings are a perfect match.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Location;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty score list")]
    EmptyInput,
}

/// Levenshtein distance over chars, two-row dynamic programme.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() {
        (&a, &b)
    } else {
        (&b, &a)
    };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (i, lc) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let substitute = prev[j] + usize::from(lc != sc);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

pub fn edit_similarity(generated: &str, truth: &str) -> f64 {
    let longest = generated.chars().count().max(truth.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(generated, truth) as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditScore {
    pub es: f64,
    pub exact: bool,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationScore {
    pub correct: bool,
    pub reward: f64,
}

/// Hierarchical edit reward: 1.0 for an exact match, `0.5 * ES` when ES is
/// strictly above 0.5, otherwise -1.0.
pub fn reward_edit(generated: &str, truth: &str) -> EditScore {
    if generated == truth {
        return EditScore {
            es: 1.0,
            exact: true,
            reward: 1.0,
        };
    }
    let es = edit_similarity(generated, truth);
    EditScore {
        es,
        exact: false,
        reward: edit_reward_for(es, false),
    }
}

/// The reward for a given similarity, used when ES comes from elsewhere.
pub fn edit_reward_for(es: f64, exact: bool) -> f64 {
    if exact {
        1.0
    } else if es > 0.5 {
        0.5 * es
    } else {
        -1.0
    }
}

pub fn reward_location(generated: Location, truth: Location) -> LocationScore {
    let correct = generated == truth;
    LocationScore {
        correct,
        reward: if correct { 1.0 } else { -1.0 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Do,
    Keep,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Do => "do",
            Split::Keep => "keep",
        }
    }
}

/// One scored sample, as fed to [`aggregate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleScore {
    Edit(EditScore),
    /// A location prediction, or an edit-task preservation check.
    Hit(bool),
}

impl SampleScore {
    fn correct(&self) -> bool {
        match self {
            SampleScore::Edit(score) => score.exact,
            SampleScore::Hit(ok) => *ok,
        }
    }
}

/// Aggregated figures for one cell. Percent-valued fields are already ×100.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub es: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emr: Option<f64>,
}

/// For the do split, edit scores yield ES and EMR; hit scores yield ACC.
/// For the keep split every sample counts toward ACC.
pub fn aggregate(scores: &[SampleScore], split: Split) -> Result<Summary, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = scores.len();
    let pct = |count: usize| 100.0 * count as f64 / n as f64;
    let correct = scores.iter().filter(|s| s.correct()).count();

    let edits: Vec<&EditScore> = scores
        .iter()
        .filter_map(|s| match s {
            SampleScore::Edit(e) => Some(e),
            SampleScore::Hit(_) => None,
        })
        .collect();

    if split == Split::Do && edits.len() == n {
        let es = 100.0 * edits.iter().map(|e| e.es).sum::<f64>() / n as f64;
        Ok(Summary {
            n,
            acc: None,
            es: Some(es),
            emr: Some(pct(correct)),
        })
    } else {
        Ok(Summary {
            n,
            acc: Some(pct(correct)),
            es: None,
            emr: None,
        })
    }
}

/// Rounds half away from zero at `digits` decimals, tolerating binary noise
/// such as 66.65 being stored as 66.6499999.
pub fn round_half_up(value: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    let scaled = value * scale;
    let nudged = scaled + scaled.signum() * 1e-9;
    nudged.round() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("flaw", "lawn"), 2);
        assert_eq!(levenshtein("héllo", "hello"), 1);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(edit_similarity("abc", "abc"), 1.0);
        assert!((edit_similarity("kitten", "sitting") - (1.0 - 3.0 / 7.0)).abs() < 1e-12);
        assert_eq!(edit_similarity("abc", ""), 0.0);
        assert_eq!(edit_similarity("", ""), 1.0);
    }

    #[test]
    fn edit_reward_cases() {
        assert_eq!(reward_edit("x = 1", "x = 1").reward, 1.0);
        // 10 chars, 2 substitutions: ES = 0.8.
        let score = reward_edit("abcdefghXY", "abcdefghij");
        assert!((score.es - 0.8).abs() < 1e-12);
        assert!((score.reward - 0.4).abs() < 1e-12);
        // ES = 0.5 exactly is not above the threshold.
        let half = reward_edit("abXY", "abcd");
        assert_eq!(half.es, 0.5);
        assert_eq!(half.reward, -1.0);
        assert_eq!(edit_reward_for(0.5000001, false), 0.25000005);
    }

    #[test]
    fn location_reward_cases() {
        assert_eq!(
            reward_location(Location::Line(42), Location::Line(42)).reward,
            1.0
        );
        assert_eq!(reward_location(Location::Keep, Location::Keep).reward, 1.0);
        let miss = reward_location(Location::Line(42), Location::Line(43));
        assert_eq!(miss.reward, -1.0);
        assert!(!miss.correct);
        assert_eq!(
            reward_location(Location::Keep, Location::Line(1)).reward,
            -1.0
        );
    }

    #[test]
    fn aggregate_do_edits() {
        let scores = [
            SampleScore::Edit(EditScore {
                es: 1.0,
                exact: true,
                reward: 1.0,
            }),
            SampleScore::Edit(EditScore {
                es: 0.8,
                exact: false,
                reward: 0.4,
            }),
        ];
        let s = aggregate(&scores, Split::Do).unwrap();
        assert_eq!(s.n, 2);
        assert!((s.es.unwrap() - 90.0).abs() < 1e-9);
        assert_eq!(s.emr, Some(50.0));
        assert_eq!(s.acc, None);
    }

    #[test]
    fn aggregate_keep() {
        let all = [SampleScore::Hit(true); 4];
        assert_eq!(aggregate(&all, Split::Keep).unwrap().acc, Some(100.0));
        let mixed = [
            SampleScore::Hit(true),
            SampleScore::Hit(false),
            SampleScore::Hit(true),
        ];
        let acc = aggregate(&mixed, Split::Keep).unwrap().acc.unwrap();
        assert_eq!(round_half_up(acc, 1), 66.7);
        assert_eq!(aggregate(&[], Split::Keep), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(66.65, 1), 66.7);
        assert_eq!(round_half_up(0.125, 2), 0.13);
        assert_eq!(round_half_up(90.0, 2), 90.0);
    }
}
