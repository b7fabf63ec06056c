//! NDJSON detection events: one vehicle entering or leaving an approach road,
//! as produced by a camera pipeline.
//!
//! Wire format, one object per line, fields in this order:
//!
//! ```text
//! {"t_ms":1000,"intersection_id":"x1","road_id":2,"track_id":17,"event":"enter","speed_mps":8.5}
//! ```
//!
//! `speed_mps` is optional and omitted when absent. Unknown fields are ignored
//! on input.

mod aggregate;
mod event;
mod synth;

pub use aggregate::{aggregate_interval, Aggregator, IntervalAggregate};
pub use event::{parse_event, read_events, write_events, DetectionEvent, EventKind};
pub use synth::{gen_synthetic_feed, SyntheticFeedOptions};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedError {
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` has the wrong type: expected {expected}")]
    WrongType { field: &'static str, expected: &'static str },
    #[error("invalid event literal {0:?}, expected \"enter\" or \"exit\"")]
    InvalidLiteral(String),
    #[error("field `{0}` must not be negative")]
    Negative(&'static str),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<FeedError>,
    },
    #[error("event at {t_ms} ms lies outside window [{start_s}, {end_s}) s")]
    OutsideWindow { t_ms: u64, start_s: f64, end_s: f64 },
    #[error("event road {road} out of range for {roads} roads")]
    RoadOutOfRange { road: u32, roads: usize },
    #[error("invalid window [{start_s}, {end_s})")]
    InvalidWindow { start_s: f64, end_s: f64 },
    #[error("invalid generator input: {0}")]
    InvalidInput(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl FeedError {
    /// The underlying category, unwrapping any line-position wrapper.
    pub fn kind(&self) -> &FeedError {
        match self {
            FeedError::AtLine { source, .. } => source.kind(),
            other => other,
        }
    }
}
