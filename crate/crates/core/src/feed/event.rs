use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::FeedError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Enter,
    Exit,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Enter => "enter",
            EventKind::Exit => "exit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub t_ms: u64,
    pub intersection_id: String,
    pub road_id: u32,
    pub track_id: u64,
    pub event: EventKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub speed_mps: Option<f64>,
}

impl DetectionEvent {
    pub fn new(
        t_ms: u64,
        intersection_id: impl Into<String>,
        road_id: u32,
        track_id: u64,
        event: EventKind,
        speed_mps: Option<f64>,
    ) -> Self {
        DetectionEvent {
            t_ms,
            intersection_id: intersection_id.into(),
            road_id,
            track_id,
            event,
            speed_mps,
        }
    }

    /// Canonical single-line encoding (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serialization is infallible")
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &'static str) -> Result<&'a Value, FeedError> {
    obj.get(name).ok_or(FeedError::MissingField(name))
}

fn unsigned(obj: &Map<String, Value>, name: &'static str) -> Result<u64, FeedError> {
    let v = field(obj, name)?;
    if let Some(n) = v.as_u64() {
        return Ok(n);
    }
    match v {
        Value::Number(n) if n.as_i64().is_some_and(|i| i < 0) => Err(FeedError::Negative(name)),
        Value::Number(n) if n.as_f64().is_some_and(|f| f < 0.0) => Err(FeedError::Negative(name)),
        _ => Err(FeedError::WrongType {
            field: name,
            expected: "nonnegative integer",
        }),
    }
}

/// Parses and validates one NDJSON line.
pub fn parse_event(line: &str) -> Result<DetectionEvent, FeedError> {
    let value: Value = serde_json::from_str(line).map_err(|e| FeedError::Malformed(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(FeedError::Malformed("expected a JSON object".into()));
    };
    let t_ms = unsigned(&obj, "t_ms")?;
    let intersection_id = match field(&obj, "intersection_id")? {
        Value::String(s) => s.clone(),
        _ => {
            return Err(FeedError::WrongType {
                field: "intersection_id",
                expected: "string",
            })
        }
    };
    let road_id = unsigned(&obj, "road_id")?;
    let road_id = u32::try_from(road_id).map_err(|_| FeedError::WrongType {
        field: "road_id",
        expected: "32-bit road index",
    })?;
    let track_id = unsigned(&obj, "track_id")?;
    let event = match field(&obj, "event")? {
        Value::String(s) if s == "enter" => EventKind::Enter,
        Value::String(s) if s == "exit" => EventKind::Exit,
        Value::String(s) => return Err(FeedError::InvalidLiteral(s.clone())),
        _ => {
            return Err(FeedError::WrongType {
                field: "event",
                expected: "string",
            })
        }
    };
    let speed_mps = match obj.get("speed_mps") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => {
            let s = n.as_f64().unwrap_or(f64::NAN);
            if s < 0.0 {
                return Err(FeedError::Negative("speed_mps"));
            }
            Some(s)
        }
        Some(_) => {
            return Err(FeedError::WrongType {
                field: "speed_mps",
                expected: "number",
            })
        }
    };
    Ok(DetectionEvent {
        t_ms,
        intersection_id,
        road_id,
        track_id,
        event,
        speed_mps,
    })
}

/// Reads every event from an NDJSON stream. Blank lines are skipped; errors
/// carry the 1-based line number.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<DetectionEvent>, FeedError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| FeedError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = parse_event(&line).map_err(|e| FeedError::AtLine {
            line: i + 1,
            source: Box::new(e),
        })?;
        out.push(event);
    }
    Ok(out)
}

pub fn write_events<W: Write>(mut writer: W, events: &[DetectionEvent]) -> std::io::Result<()> {
    for e in events {
        writeln!(writer, "{}", e.to_line())?;
    }
    writer.flush()
}
