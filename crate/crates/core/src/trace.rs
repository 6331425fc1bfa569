//! Session trace: an ordered, timestamped JSON-lines log of tool calls,
//! tool results, console lines, model usage and lifecycle events.
//!
//! Every line is `{seq, t_rel_ms, kind, ...}`. Sequence numbers are gapless
//! and start at zero.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::kdbg::MutationEvent;
use crate::toolserver::ToolCategory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub t_rel_ms: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventBody {
    ToolCall {
        tool: String,
        category: Option<ToolCategory>,
        args: Value,
        /// transcript line count when the call was dispatched
        console_mark: usize,
    },
    ToolResult {
        call_seq: u64,
        tool: String,
        ok: bool,
        error: Option<String>,
        result_digest: String,
        duration_ms: u64,
        result: Value,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        mutations: Vec<MutationEvent>,
    },
    Console {
        line_index: usize,
        text: String,
    },
    ModelUsage {
        input_tokens: u64,
        output_tokens: u64,
    },
    Lifecycle(LifecycleEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LifecycleEvent {
    SessionStart {
        case_id: String,
        profile: String,
    },
    GuestStarted {
        snapshot_id: String,
        initial_digest: String,
        restart: bool,
    },
    GateStopped {
        episode: u64,
        bp_id: Option<u32>,
        reason: String,
        console_mark: usize,
    },
    GateRunning {
        episode: u64,
        console_mark: usize,
    },
    SessionEnd {
        termination: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("malformed trace at line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
struct Inner {
    events: Vec<TraceEvent>,
}

/// Shared, append-only event log for one session.
#[derive(Debug, Clone)]
pub struct TraceRecorder {
    inner: Arc<Mutex<Inner>>,
    start: Instant,
}

impl Default for TraceRecorder {
    fn default() -> Self {
        Self::new()
    }
}

impl TraceRecorder {
    pub fn new() -> Self {
        Self::starting_at(Instant::now())
    }

    pub fn starting_at(start: Instant) -> Self {
        Self { inner: Arc::new(Mutex::new(Inner { events: Vec::new() })), start }
    }

    pub fn record(&self, body: EventBody) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        let seq = inner.events.len() as u64;
        inner.events.push(TraceEvent {
            seq,
            t_rel_ms: self.start.elapsed().as_millis() as u64,
            body,
        });
        seq
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<TraceEvent> {
        self.inner.lock().unwrap().events.clone()
    }

    pub fn to_jsonl(&self) -> String {
        events_to_jsonl(&self.snapshot())
    }
}

pub fn events_to_jsonl(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("trace event serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: TraceEvent = serde_json::from_str(line)
            .map_err(|e| TraceError::MalformedTrace { line: i + 1, reason: e.to_string() })?;
        if ev.seq != events.len() as u64 {
            return Err(TraceError::MalformedTrace {
                line: i + 1,
                reason: format!("expected seq {}, found {}", events.len(), ev.seq),
            });
        }
        events.push(ev);
    }
    Ok(events)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    let f = fs::File::open(path)?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_jsonl(&text)
}

/// Drop wall-clock fields (`t_rel_ms`, `duration_ms`) at any depth so that
/// traces from two runs can be compared for equality.
pub fn strip_timing(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("t_rel_ms");
            map.remove("duration_ms");
            for v in map.values_mut() {
                strip_timing(v);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Trace rendered as JSON values with timing removed.
pub fn timing_free(events: &[TraceEvent]) -> Vec<Value> {
    events
        .iter()
        .map(|e| {
            let mut v = serde_json::to_value(e).expect("trace event serializes");
            strip_timing(&mut v);
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn events_round_trip_through_jsonl() {
        let rec = TraceRecorder::new();
        rec.record(EventBody::Lifecycle(LifecycleEvent::SessionStart {
            case_id: "c1".into(),
            profile: "baseline".into(),
        }));
        rec.record(EventBody::ToolCall {
            tool: "vm.exec".into(),
            category: Some(ToolCategory::VmInteraction),
            args: json!({"command": "id"}),
            console_mark: 3,
        });
        rec.record(EventBody::Console { line_index: 3, text: "uid=0(root)".into() });
        let text = rec.to_jsonl();
        assert!(text.lines().next().unwrap().contains("\"kind\":\"lifecycle\""));
        assert_eq!(parse_jsonl(&text).unwrap(), rec.snapshot());
    }

    #[test]
    fn gaps_are_malformed() {
        let text = "{\"seq\":1,\"t_rel_ms\":0,\"kind\":\"model_usage\",\"input_tokens\":1,\"output_tokens\":1}\n";
        assert!(matches!(parse_jsonl(text), Err(TraceError::MalformedTrace { line: 1, .. })));
        assert!(matches!(parse_jsonl("not json\n"), Err(TraceError::MalformedTrace { .. })));
    }

    #[test]
    fn timing_fields_are_stripped_recursively() {
        let mut v = json!({"t_rel_ms": 5, "result": {"duration_ms": 7, "text": "x"}, "list": [{"duration_ms": 1}]});
        strip_timing(&mut v);
        assert_eq!(v, json!({"result": {"text": "x"}, "list": [{}]}));
    }
}
