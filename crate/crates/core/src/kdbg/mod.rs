//! Kernel debugger bridge over the MI protocol.
//!
//! A reader thread parses every line the stub sends. Result records are
//! matched to commands by token; `*stopped` and `*running` records drive
//! the shared [`DebugGate`]. Commands that alter guest state are written to
//! the [`MutationLedger`] before they are sent.

mod classify;
mod gate;
mod mi;

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use classify::{classify_command, classify_expression, classify_inspect, MutationCategory};
pub(crate) use classify::{called_function, split_assignment};
pub use gate::{DebugGate, GateStatus, GateTransition};
pub use mi::{parse_mi_record, quote_cstring, serialize_mi_record, MalformedRecord, MiClass, MiLine, MiRecord, MiValue};

use crate::guestvm::{GuestHandle, GuestState, StubClaim, Transcript};

pub const DEFAULT_STUB_TIMEOUT: Duration = Duration::from_secs(10);
/// Upper bound on bytes returned by one memory inspection.
pub const MAX_MEMORY_READ: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationEvent {
    /// position in the session-wide ledger
    pub seq: u64,
    pub command_text: String,
    pub category: MutationCategory,
    /// breakpoint id of the stop during which the command was issued
    pub stopped_episode: Option<u32>,
    /// gate episode, when issued while stopped
    pub episode: Option<u64>,
    /// transcript length when the command was issued
    pub console_mark: usize,
}

/// Session-wide, append-only ledger of mutating debugger commands.
#[derive(Debug, Clone, Default)]
pub struct MutationLedger {
    events: Arc<Mutex<Vec<MutationEvent>>>,
}

impl MutationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, command_text: &str, category: MutationCategory, gate: &DebugGate, mark: usize) -> MutationEvent {
        let mut events = self.events.lock().unwrap();
        let ev = MutationEvent {
            seq: events.len() as u64,
            command_text: command_text.to_string(),
            category,
            stopped_episode: gate.current_breakpoint(),
            episode: gate.current_episode(),
            console_mark: mark,
        };
        events.push(ev.clone());
        ev
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn since(&self, start: usize) -> Vec<MutationEvent> {
        let events = self.events.lock().unwrap();
        events.get(start..).map(<[_]>::to_vec).unwrap_or_default()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KdbgError {
    #[error("debugger stub unavailable: {0}")]
    StubUnavailable(String),
    #[error("a debug session is already attached to this guest")]
    AlreadyAttached,
    #[error(transparent)]
    MalformedRecord(#[from] MalformedRecord),
    #[error("unknown breakpoint {0}")]
    UnknownBreakpoint(u32),
    #[error("unresolvable breakpoint location `{location}`: {message}")]
    UnresolvableLocation { location: String, message: String },
    #[error("debugger error: {0}")]
    StubError(String),
    #[error("debuggee is not stopped")]
    NotStopped,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Byte streams to a debugger speaking MI. `keepalive` owns whatever must
/// live as long as the connection (a child process, say).
pub struct StubConnection {
    pub reader: Box<dyn std::io::Read + Send>,
    pub writer: Box<dyn Write + Send>,
    pub keepalive: Option<Box<dyn Send>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub id: u32,
    pub location: String,
    pub enabled: bool,
    pub hit_count: u64,
    pub address: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum BreakpointAction {
    Set { location: String },
    Delete { id: u32 },
    List,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "what", rename_all = "snake_case")]
pub enum InspectTarget {
    Registers,
    Memory { address: String, length: usize },
    Expression { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterValue {
    pub name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "what", rename_all = "snake_case")]
pub enum InspectResult {
    Registers { registers: Vec<RegisterValue> },
    Memory { address: String, length: usize, hex: String },
    Expression { expression: String, value: String },
}

#[derive(Default)]
struct ReaderState {
    responses: HashMap<u64, Vec<MiRecord>>,
    /// untokened records received since the last command was sent
    pending: Vec<MiRecord>,
    closed: bool,
    raw: Vec<String>,
}

struct Shared {
    st: Mutex<ReaderState>,
    cv: Condvar,
    breakpoints: Mutex<BTreeMap<u32, Breakpoint>>,
}

pub struct DebugSession {
    session_id: String,
    writer: Mutex<Box<dyn Write + Send>>,
    shared: Arc<Shared>,
    gate: DebugGate,
    transcript: Transcript,
    ledger: MutationLedger,
    next_token: AtomicU64,
    timeout: Duration,
    _claim: StubClaim,
    _keepalive: Option<Box<dyn Send>>,
}

impl std::fmt::Debug for DebugSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DebugSession").field("session_id", &self.session_id).finish_non_exhaustive()
    }
}

fn reader_loop(reader: Box<dyn std::io::Read + Send>, shared: Arc<Shared>, gate: DebugGate) {
    let mut reader = BufReader::new(reader);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        let line = String::from_utf8_lossy(&buf).trim_end_matches(['\r', '\n']).to_string();
        if line.is_empty() {
            continue;
        }
        let parsed = parse_mi_record(&line);
        let mut st = shared.st.lock().unwrap();
        st.raw.push(line);
        let rec = match parsed {
            Ok(MiLine::Record(r)) => r,
            Ok(MiLine::Prompt) => continue,
            Err(e) => {
                log::warn!("{e}");
                continue;
            }
        };
        if rec.class == MiClass::ExecAsync {
            match rec.kind.as_str() {
                "stopped" => {
                    let bp = rec.get_str("bkptno").and_then(|s| s.parse::<u32>().ok());
                    let status = match (rec.get_str("reason"), bp) {
                        (Some("breakpoint-hit"), Some(id)) => {
                            if let Some(b) = shared.breakpoints.lock().unwrap().get_mut(&id) {
                                b.hit_count += 1;
                            }
                            GateStatus::StoppedBreakpoint { bp_id: id }
                        }
                        (reason, _) => GateStatus::StoppedOther { reason: reason.unwrap_or("unknown").to_string() },
                    };
                    gate.on_stopped(status);
                }
                "running" => gate.on_running(),
                _ => {}
            }
        }
        match (rec.class, rec.token) {
            (MiClass::Result, Some(t)) => {
                let mut recs = std::mem::take(&mut st.pending);
                recs.push(rec);
                st.responses.insert(t, recs);
            }
            _ => st.pending.push(rec),
        }
        shared.cv.notify_all();
    }
    shared.st.lock().unwrap().closed = true;
    shared.cv.notify_all();
}

fn error_message(records: &[MiRecord]) -> String {
    records
        .iter()
        .rev()
        .find_map(|r| r.get_str("msg"))
        .unwrap_or("unknown debugger error")
        .to_string()
}

/// Connect to the guest's debugger stub. One session per guest.
pub fn attach(handle: &GuestHandle, ledger: &MutationLedger) -> Result<DebugSession, KdbgError> {
    attach_with_timeout(handle, ledger, DEFAULT_STUB_TIMEOUT)
}

pub fn attach_with_timeout(
    handle: &GuestHandle,
    ledger: &MutationLedger,
    timeout: Duration,
) -> Result<DebugSession, KdbgError> {
    if handle.state() != GuestState::Running {
        return Err(KdbgError::StubUnavailable(format!("guest is {:?}", handle.state())));
    }
    let claim = handle.try_claim_stub().ok_or(KdbgError::AlreadyAttached)?;
    let conn = handle.connect_debug_stub().map_err(|e| KdbgError::StubUnavailable(e.to_string()))?;
    let shared = Arc::new(Shared {
        st: Mutex::new(ReaderState::default()),
        cv: Condvar::new(),
        breakpoints: Mutex::new(BTreeMap::new()),
    });
    let gate = handle.gate();
    {
        let shared = shared.clone();
        let gate = gate.clone();
        let reader = conn.reader;
        thread::Builder::new()
            .name("mi-reader".into())
            .spawn(move || reader_loop(reader, shared, gate))
            .map_err(|e| KdbgError::StubUnavailable(e.to_string()))?;
    }
    let session = DebugSession {
        session_id: format!("{}-dbg", handle.guest_id()),
        writer: Mutex::new(conn.writer),
        shared,
        gate,
        transcript: handle.transcript(),
        ledger: ledger.clone(),
        next_token: AtomicU64::new(1),
        timeout,
        _claim: claim,
        _keepalive: conn.keepalive,
    };
    session.send("-gdb-set pagination off").map_err(|e| KdbgError::StubUnavailable(e.to_string()))?;
    Ok(session)
}

impl DebugSession {
    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn gate(&self) -> &DebugGate {
        &self.gate
    }

    pub fn ledger(&self) -> &MutationLedger {
        &self.ledger
    }

    /// Every line received from the stub, in order.
    pub fn raw_transcript(&self) -> Vec<String> {
        self.shared.st.lock().unwrap().raw.clone()
    }

    /// Send one MI command and collect the records up to its result.
    /// `^error` results become [`KdbgError::StubError`].
    pub fn send(&self, command: &str) -> Result<Vec<MiRecord>, KdbgError> {
        let records = self.send_raw(command)?;
        if records.last().is_some_and(|r| r.is_result("error")) {
            return Err(KdbgError::StubError(error_message(&records)));
        }
        Ok(records)
    }

    fn send_raw(&self, command: &str) -> Result<Vec<MiRecord>, KdbgError> {
        if command.contains('\n') {
            return Err(KdbgError::InvalidRequest("command must be a single line".into()));
        }
        let mut w = self.writer.lock().unwrap();
        let token = self.next_token.fetch_add(1, Ordering::SeqCst);
        {
            let mut st = self.shared.st.lock().unwrap();
            if st.closed {
                return Err(KdbgError::StubError("debugger connection closed".into()));
            }
            st.pending.clear();
        }
        writeln!(w, "{token}{command}")
            .and_then(|_| w.flush())
            .map_err(|e| KdbgError::StubError(format!("write to stub failed: {e}")))?;
        let deadline = Instant::now() + self.timeout;
        let mut st = self.shared.st.lock().unwrap();
        loop {
            if let Some(recs) = st.responses.remove(&token) {
                return Ok(recs);
            }
            if st.closed {
                return Err(KdbgError::StubError("debugger connection closed".into()));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(KdbgError::StubError(format!("no response to `{command}` within {:?}", self.timeout)));
            }
            st = self.shared.cv.wait_timeout(st, deadline - now).unwrap().0;
        }
    }

    fn ledger_if_mutating(&self, text: &str, category: Option<MutationCategory>) -> Option<MutationEvent> {
        category.map(|c| self.ledger.record(text, c, &self.gate, self.transcript.len()))
    }

    pub fn set_breakpoint(&self, location: &str) -> Result<Breakpoint, KdbgError> {
        let location = location.trim();
        if location.is_empty() || location.contains('\n') {
            return Err(KdbgError::InvalidRequest("empty breakpoint location".into()));
        }
        let arg = if location.contains(char::is_whitespace) { quote_cstring(location) } else { location.to_string() };
        let records = self.send_raw(&format!("-break-insert {arg}"))?;
        let result = records.last().expect("send_raw returns the result record");
        if result.is_result("error") {
            return Err(KdbgError::UnresolvableLocation {
                location: location.to_string(),
                message: error_message(&records),
            });
        }
        let bkpt = result.get("bkpt").ok_or_else(|| KdbgError::StubError("break-insert without bkpt".into()))?;
        let id = bkpt
            .get("number")
            .and_then(MiValue::as_str)
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| KdbgError::StubError("breakpoint without number".into()))?;
        let bp = Breakpoint {
            id,
            location: location.to_string(),
            enabled: bkpt.get("enabled").and_then(MiValue::as_str) != Some("n"),
            hit_count: 0,
            address: bkpt.get("addr").and_then(MiValue::as_str).map(str::to_string),
        };
        self.shared.breakpoints.lock().unwrap().insert(id, bp.clone());
        Ok(bp)
    }

    pub fn delete_breakpoint(&self, id: u32) -> Result<(), KdbgError> {
        if !self.shared.breakpoints.lock().unwrap().contains_key(&id) {
            return Err(KdbgError::UnknownBreakpoint(id));
        }
        self.send(&format!("-break-delete {id}"))?;
        self.shared.breakpoints.lock().unwrap().remove(&id);
        Ok(())
    }

    pub fn list_breakpoints(&self) -> Vec<Breakpoint> {
        self.shared.breakpoints.lock().unwrap().values().cloned().collect()
    }

    pub fn manage_breakpoint(&self, action: &BreakpointAction) -> Result<Vec<Breakpoint>, KdbgError> {
        match action {
            BreakpointAction::Set { location } => Ok(vec![self.set_breakpoint(location)?]),
            BreakpointAction::Delete { id } => {
                self.delete_breakpoint(*id)?;
                Ok(Vec::new())
            }
            BreakpointAction::List => Ok(self.list_breakpoints()),
        }
    }

    pub fn inspect(&self, target: &InspectTarget) -> Result<InspectResult, KdbgError> {
        match target {
            InspectTarget::Registers => {
                let names = self.send("-data-list-register-names")?;
                let names: Vec<String> = names
                    .last()
                    .and_then(|r| r.get("register-names"))
                    .map(|v| v.items().iter().filter_map(|i| i.as_str()).map(str::to_string).collect())
                    .unwrap_or_default();
                let values = self.send("-data-list-register-values x")?;
                let mut registers = Vec::new();
                if let Some(list) = values.last().and_then(|r| r.get("register-values")) {
                    for item in list.items() {
                        let num = item.get("number").and_then(MiValue::as_str).and_then(|n| n.parse::<usize>().ok());
                        let value = item.get("value").and_then(MiValue::as_str);
                        if let (Some(n), Some(v)) = (num, value) {
                            if let Some(name) = names.get(n).filter(|s| !s.is_empty()) {
                                registers.push(RegisterValue { name: name.clone(), value: v.to_string() });
                            }
                        }
                    }
                }
                Ok(InspectResult::Registers { registers })
            }
            InspectTarget::Memory { address, length } => {
                if *length == 0 || *length > MAX_MEMORY_READ {
                    return Err(KdbgError::InvalidRequest(format!("length must be in 1..={MAX_MEMORY_READ}")));
                }
                if address.contains(char::is_whitespace) || address.is_empty() {
                    return Err(KdbgError::InvalidRequest("address must be a single token".into()));
                }
                let recs = self.send(&format!("-data-read-memory-bytes {address} {length}"))?;
                let mut hex = String::new();
                if let Some(mem) = recs.last().and_then(|r| r.get("memory")) {
                    for block in mem.items() {
                        hex.push_str(block.get("contents").and_then(MiValue::as_str).unwrap_or(""));
                    }
                }
                Ok(InspectResult::Memory { address: address.clone(), length: hex.len() / 2, hex })
            }
            InspectTarget::Expression { text } => {
                let text = text.trim();
                if text.is_empty() {
                    return Err(KdbgError::InvalidRequest("empty expression".into()));
                }
                let expr = strip_print_word(text);
                self.ledger_if_mutating(text, classify_inspect(text));
                let recs = self.send(&format!("-data-evaluate-expression {}", quote_cstring(expr)))?;
                let value = recs.last().and_then(|r| r.get_str("value")).unwrap_or("").to_string();
                if value.contains("<optimized out>") {
                    return Err(KdbgError::StubError(format!("`{expr}`: value optimized out")));
                }
                Ok(InspectResult::Expression { expression: expr.to_string(), value })
            }
        }
    }

    /// Forward a CLI or MI command verbatim and return every record of the
    /// response.
    pub fn raw_command(&self, text: &str) -> Result<Vec<MiRecord>, KdbgError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(KdbgError::InvalidRequest("empty command".into()));
        }
        self.ledger_if_mutating(text, classify_command(text));
        let stripped = text.trim_start_matches(|c: char| c.is_ascii_digit());
        if stripped.starts_with('-') {
            self.send(stripped)
        } else {
            self.send(&format!("-interpreter-exec console {}", quote_cstring(text)))
        }
    }

    /// Continue a stopped debuggee and wait for the gate to reopen.
    pub fn resume(&self) -> Result<(), KdbgError> {
        if !self.gate.is_stopped() {
            return Err(KdbgError::NotStopped);
        }
        self.send("-exec-continue")?;
        if self.gate.wait_running(self.timeout) {
            Ok(())
        } else {
            Err(KdbgError::StubError("target did not report running".into()))
        }
    }
}

fn strip_print_word(text: &str) -> &str {
    let t = text.trim_start();
    let end = t.find(char::is_whitespace).unwrap_or(t.len());
    let word = t[..end].split('/').next().unwrap_or("");
    if matches!(word, "p" | "print" | "output" | "inspect" | "call") && end < t.len() {
        t[end..].trim_start()
    } else {
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn print_word_is_stripped_for_evaluation() {
        assert_eq!(strip_print_word("p obj->len = 0"), "obj->len = 0");
        assert_eq!(strip_print_word("print/x size"), "size");
        assert_eq!(strip_print_word("size"), "size");
        assert_eq!(strip_print_word("p"), "p");
    }

    #[test]
    fn ledger_records_gate_context() {
        let t = Transcript::new();
        let gate = DebugGate::new(t.clone());
        let ledger = MutationLedger::new();
        let a = ledger.record("call f()", MutationCategory::FunctionCall, &gate, 0);
        gate.on_stopped(GateStatus::StoppedBreakpoint { bp_id: 3 });
        t.push_guest("x");
        let b = ledger.record("set $rip = 0", MutationCategory::RegisterWrite, &gate, t.len());
        assert_eq!((a.seq, a.stopped_episode, a.episode), (0, None, None));
        assert_eq!((b.seq, b.stopped_episode, b.episode, b.console_mark), (1, Some(3), Some(1), 1));
        assert_eq!(ledger.since(1), vec![b]);
    }
}
