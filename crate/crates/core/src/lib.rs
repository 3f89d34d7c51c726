//! Next-edit suggestion toolkit.
//!
//! * [`diff`]: line diffs and the NES diff text format
//! * [`trajectory`]: incremental edit tracking with overlap merging
//! * [`dataset`]: training/evaluation instances with do/keep labels
//! * [`metrics`]: ES / EMR / ACC and the location and edit rewards
//! * [`model_io`]: prompts, output parsing and completion backends
//! * [`eval`]: dataset replay against a backend and report tables
//! * [`synth`]: seeded synthetic texts, edit streams and datasets

pub mod dataset;
pub mod diff;
pub mod eval;
pub mod exec;
pub mod metrics;
pub mod model_io;
pub mod synth;
pub mod trajectory;

use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use diff::{
    apply_diff, compute_diff, parse_nes_diff, render_nes_diff, CodeSnapshot, DeltaScript,
    DiffError, HunkKind, LineHunk, LineRange,
};
pub use trajectory::{EditEvent, EditTrajectory, HistoryWindow, TrajectoryState};

/// A predicted or ground-truth edit location: a 1-based line, or the keep
/// token meaning "no jump, no edit".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Line(usize),
    Keep,
}

pub const KEEP_TOKEN: &str = "keep";

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "{n}"),
            Location::Keep => f.write_str(KEEP_TOKEN),
        }
    }
}

impl FromStr for Location {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case(KEEP_TOKEN) {
            return Ok(Location::Keep);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Location::Line(n)),
            _ => Err(format!(
                "expected a positive line number or \"keep\", got {s:?}"
            )),
        }
    }
}

impl Serialize for Location {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Location::Line(n) => serializer.serialize_u64(*n as u64),
            Location::Keep => serializer.serialize_str(KEEP_TOKEN),
        }
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct LocationVisitor;

        impl Visitor<'_> for LocationVisitor {
            type Value = Location;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive line number or \"keep\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Location, E> {
                if v == 0 {
                    return Err(E::custom("line numbers are 1-based"));
                }
                Ok(Location::Line(v as usize))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Location, E> {
                if v < 1 {
                    return Err(E::custom("line numbers are 1-based"));
                }
                Ok(Location::Line(v as usize))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Location, E> {
                if v == KEEP_TOKEN {
                    Ok(Location::Keep)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(LocationVisitor)
    }
}

/// Hex SHA-256 of a text, used for resync and staleness checks.
pub fn text_sha256(text: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(text.as_bytes()))
}
