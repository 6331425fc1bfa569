//! One tool-server session: owns the guest, the debugger session and the
//! trace, and routes each request to its module.

use std::io::{BufRead, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::{json, Value};

use super::rpc::{parse_request, RpcError, RpcRequest, RpcResponse};
use super::rpc::{INTERNAL_ERROR, INVALID_PARAMS, METHOD_NOT_FOUND, TOOL_ERROR};
use super::{find_tool, list_tools, registry};
use crate::codebrowse::{self, CodeIndex, QueryMode, DEFAULT_MAX_LINES, DEFAULT_QUERY_LIMIT};
use crate::envprep::ReproEnvironment;
use crate::guestvm::{GuestHandle, GuestOptions, Signal, Transcript, DEFAULT_EXEC_TIMEOUT, RESUME_SETTLE};
use crate::kdbg::{self, BreakpointAction, DebugSession, GateStatus, InspectTarget, MiClass, MutationLedger};
use crate::profile::CapabilityProfile;
use crate::trace::{EventBody, LifecycleEvent, TraceRecorder};
use crate::util::sha256_hex;

/// Index file written by the `index` command next to the environment.
pub const INDEX_FILE: &str = "code.index";
pub const DEFAULT_UPLOAD_PATH: &str = "/root/poc";

#[derive(Debug, Clone)]
pub struct SessionOptions {
    /// guest options; `None` uses the backend defaults
    pub guest: Option<GuestOptions>,
    pub stub_timeout: Duration,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { guest: None, stub_timeout: kdbg::DEFAULT_STUB_TIMEOUT }
    }
}

/// A failed tool call, named after the owning module's error variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolError {
    pub name: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

impl ToolError {
    fn from_err<E: std::fmt::Debug + std::fmt::Display>(e: &E) -> Self {
        Self { name: variant_name(e), message: e.to_string(), data: None }
    }

    fn with_data(mut self, data: Value) -> Self {
        self.data = Some(data);
        self
    }
}

/// Leading identifier of a Debug rendering: the enum variant.
fn variant_name<E: std::fmt::Debug>(e: &E) -> String {
    let s = format!("{e:?}");
    s.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect()
}

enum CallError {
    InvalidParams(String),
    Tool(ToolError),
}

fn tool<E: std::fmt::Debug + std::fmt::Display>(e: E) -> CallError {
    CallError::Tool(ToolError::from_err(&e))
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("tool results serialize")
}

fn arg_str<'a>(args: &'a Value, key: &str) -> Option<&'a str> {
    args.get(key).and_then(Value::as_str)
}

fn arg_u64(args: &Value, key: &str) -> Option<u64> {
    args.get(key).and_then(Value::as_u64)
}

fn need_str<'a>(args: &'a Value, key: &str) -> Result<&'a str, CallError> {
    arg_str(args, key).ok_or_else(|| CallError::InvalidParams(format!("missing string parameter `{key}`")))
}

fn need_u64(args: &Value, key: &str) -> Result<u64, CallError> {
    arg_u64(args, key).ok_or_else(|| CallError::InvalidParams(format!("parameter `{key}` must be a non-negative integer")))
}

pub struct ToolSession {
    env: ReproEnvironment,
    profile: CapabilityProfile,
    opts: SessionOptions,
    trace: TraceRecorder,
    transcript: Transcript,
    ledger: MutationLedger,
    index: Option<CodeIndex>,
    // dropped before `guest`
    debug: Option<DebugSession>,
    guest: Option<GuestHandle>,
    guests_started: u64,
    console_mark: usize,
    gate_mark: usize,
    episode_base: u64,
    max_episode: u64,
}

impl ToolSession {
    pub fn new(env: ReproEnvironment, profile: CapabilityProfile, trace: TraceRecorder, transcript: Transcript, opts: SessionOptions) -> Self {
        Self {
            env,
            profile,
            opts,
            trace,
            transcript,
            ledger: MutationLedger::new(),
            index: None,
            debug: None,
            guest: None,
            guests_started: 0,
            console_mark: 0,
            gate_mark: 0,
            episode_base: 0,
            max_episode: 0,
        }
    }

    pub fn profile(&self) -> &CapabilityProfile {
        &self.profile
    }

    pub fn env(&self) -> &ReproEnvironment {
        &self.env
    }

    pub fn trace(&self) -> &TraceRecorder {
        &self.trace
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn ledger(&self) -> &MutationLedger {
        &self.ledger
    }

    pub fn guest(&self) -> Option<&GuestHandle> {
        self.guest.as_ref()
    }

    /// Handle one protocol message. Notifications get no response.
    pub fn dispatch(&mut self, req: &RpcRequest) -> Option<RpcResponse> {
        let id = req.id.clone()?;
        let outcome = catch_unwind(AssertUnwindSafe(|| self.route(req)));
        Some(match outcome {
            Ok(Ok(result)) => RpcResponse::ok(id, result),
            Ok(Err(e)) => RpcResponse::err(id, e),
            Err(_) => RpcResponse::err(id, RpcError::new(INTERNAL_ERROR, "tool server panicked")),
        })
    }

    /// Handle one wire line.
    pub fn dispatch_line(&mut self, line: &str) -> Option<RpcResponse> {
        match parse_request(line) {
            Ok(req) => self.dispatch(&req),
            Err(resp) => Some(resp),
        }
    }

    /// Serve newline-delimited requests until end of input.
    pub fn serve(&mut self, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(resp) = self.dispatch_line(&line) {
                writeln!(output, "{}", serde_json::to_string(&resp).expect("response serializes"))?;
                output.flush()?;
            }
        }
        Ok(())
    }

    fn route(&mut self, req: &RpcRequest) -> Result<Value, RpcError> {
        match req.method.as_str() {
            "initialize" => Ok(json!({
                "protocolVersion": "2024-11-05",
                "serverInfo": {"name": "patchrepro-tools", "version": env!("CARGO_PKG_VERSION")},
                "capabilities": {"tools": {}},
                "registryVersion": registry().version,
            })),
            "tools/list" => {
                let tools: Vec<Value> = list_tools(&self.profile)
                    .iter()
                    .map(|t| {
                        json!({
                            "name": t.name,
                            "description": t.description,
                            "category": t.category,
                            "inputSchema": t.input_schema(),
                        })
                    })
                    .collect();
                Ok(json!({ "tools": tools }))
            }
            "tools/call" => {
                let name = req
                    .params
                    .get("name")
                    .and_then(Value::as_str)
                    .ok_or_else(|| RpcError::new(INVALID_PARAMS, "tools/call needs a string `name`"))?;
                let args = req.params.get("arguments").cloned().unwrap_or(Value::Object(Default::default()));
                match self.call_tool(name, args) {
                    Ok(v) => Ok(v),
                    Err(ToolCallFailure::NotFound) => {
                        Err(RpcError::new(METHOD_NOT_FOUND, format!("tool `{name}` is not available")))
                    }
                    Err(ToolCallFailure::InvalidParams(m)) => Err(RpcError::new(INVALID_PARAMS, m)),
                    Err(ToolCallFailure::Tool(e)) => Err(RpcError {
                        code: TOOL_ERROR,
                        message: format!("{}: {}", e.name, e.message),
                        data: Some(to_json(&e)),
                    }),
                }
            }
            other => Err(RpcError::new(METHOD_NOT_FOUND, format!("unknown method `{other}`"))),
        }
    }

    /// Run a tool and record the call and its result in the trace.
    /// Requests naming unregistered or filtered tools leave no event.
    pub fn call_tool(&mut self, name: &str, args: Value) -> Result<Value, ToolCallFailure> {
        let desc = match find_tool(name) {
            Some(d) if self.profile.allows(d.category) => d,
            _ => return Err(ToolCallFailure::NotFound),
        };
        self.drain();
        let call_seq = self.trace.record(EventBody::ToolCall {
            tool: name.to_string(),
            category: Some(desc.category),
            args: args.clone(),
            console_mark: self.transcript.len(),
        });
        let mutation_mark = self.ledger.len();
        let started = Instant::now();
        let outcome = match desc.validate_args(&args) {
            Err(m) => Err(CallError::InvalidParams(m)),
            Ok(()) => self.execute(name, &args),
        };
        let duration_ms = started.elapsed().as_millis() as u64;
        self.drain();
        let base = self.episode_base;
        let mutations = self
            .ledger
            .since(mutation_mark)
            .into_iter()
            .map(|mut m| {
                m.episode = m.episode.map(|e| e + base);
                m
            })
            .collect();
        let (ok, error, result) = match &outcome {
            Ok(v) => (true, None, v.clone()),
            Err(CallError::InvalidParams(m)) => (false, Some(format!("InvalidParams: {m}")), Value::Null),
            Err(CallError::Tool(e)) => (false, Some(format!("{}: {}", e.name, e.message)), e.data.clone().unwrap_or(Value::Null)),
        };
        let mut digest_input = result.clone();
        crate::trace::strip_timing(&mut digest_input);
        self.trace.record(EventBody::ToolResult {
            call_seq,
            tool: name.to_string(),
            ok,
            error,
            result_digest: sha256_hex(serde_json::to_vec(&digest_input).expect("json")),
            duration_ms,
            result,
            mutations,
        });
        outcome.map_err(|e| match e {
            CallError::InvalidParams(m) => ToolCallFailure::InvalidParams(m),
            CallError::Tool(t) => ToolCallFailure::Tool(t),
        })
    }

    fn execute(&mut self, name: &str, args: &Value) -> Result<Value, CallError> {
        match name {
            "code.list_symbols" => {
                let file = need_str(args, "file")?;
                Ok(to_json(&self.index()?.list_symbols(file).map_err(tool)?))
            }
            "code.query" => {
                let sym = need_str(args, "name")?;
                let mode: QueryMode = arg_str(args, "mode").unwrap_or("definitions").parse().map_err(CallError::InvalidParams)?;
                let limit = arg_u64(args, "limit").unwrap_or(DEFAULT_QUERY_LIMIT as u64) as usize;
                Ok(to_json(&self.index()?.query_symbol(sym, mode, limit).map_err(tool)?))
            }
            "code.read" => {
                let file = need_str(args, "file")?;
                let start = need_u64(args, "start")? as usize;
                let end = need_u64(args, "end")? as usize;
                let max = (arg_u64(args, "max_lines").unwrap_or(DEFAULT_MAX_LINES as u64) as usize).min(DEFAULT_MAX_LINES);
                let snippet = codebrowse::read_range(&self.env.source_root, file, start, end, max).map_err(tool)?;
                let mut v = to_json(&snippet);
                v["text"] = Value::String(snippet.render());
                Ok(v)
            }
            "vm.start" => self.start_guest(false),
            "vm.restart" => {
                if self.guest.is_none() {
                    return self.start_guest(true);
                }
                self.debug = None;
                let guest = self.guest.as_ref().expect("checked");
                guest.restart().map_err(tool)?;
                self.record_started(true)
            }
            "vm.compile_upload" => {
                let source = need_str(args, "source")?;
                let dest = arg_str(args, "dest").unwrap_or(DEFAULT_UPLOAD_PATH);
                let guest = self.ensure_guest()?;
                match guest.compile_and_upload(source, dest) {
                    Ok(r) => Ok(to_json(&r)),
                    Err(crate::guestvm::GuestError::CompileFailed { diagnostics }) => Err(CallError::Tool(
                        ToolError { name: "CompileFailed".into(), message: "compilation failed".into(), data: None }
                            .with_data(json!({ "diagnostics": diagnostics })),
                    )),
                    Err(e) => Err(tool(e)),
                }
            }
            "vm.exec" => {
                let command = need_str(args, "command")?;
                let timeout = arg_u64(args, "timeout_s").map(Duration::from_secs).unwrap_or(DEFAULT_EXEC_TIMEOUT);
                let guest = self.ensure_guest()?;
                let out = guest.exec_console(command, Some(timeout)).map_err(tool)?;
                if out.halted_by_debugger {
                    return Err(CallError::Tool(
                        ToolError {
                            name: "DebuggeeHalted".into(),
                            message: "a breakpoint stopped the kernel; use dbg.resume to continue".into(),
                            data: None,
                        }
                        .with_data(to_json(&out)),
                    ));
                }
                Ok(to_json(&out))
            }
            "vm.signal" => {
                let signal: Signal = need_str(args, "signal")?.parse().map_err(CallError::InvalidParams)?;
                let guest = self.ensure_guest()?;
                Ok(to_json(&guest.send_signal(signal).map_err(tool)?))
            }
            "dbg.breakpoint" => {
                let action = match need_str(args, "action")? {
                    "set" => BreakpointAction::Set { location: need_str(args, "location")?.to_string() },
                    "delete" => BreakpointAction::Delete {
                        id: u32::try_from(need_u64(args, "id")?).map_err(|_| CallError::InvalidParams("id out of range".into()))?,
                    },
                    "list" => BreakpointAction::List,
                    other => return Err(CallError::InvalidParams(format!("unknown action `{other}`"))),
                };
                let dbg = self.ensure_debug()?;
                Ok(json!({ "breakpoints": dbg.manage_breakpoint(&action).map_err(tool)? }))
            }
            "dbg.inspect" => {
                let target = match need_str(args, "what")? {
                    "registers" => InspectTarget::Registers,
                    "memory" => InspectTarget::Memory {
                        address: need_str(args, "address")?.to_string(),
                        length: need_u64(args, "length")? as usize,
                    },
                    "expression" => InspectTarget::Expression { text: need_str(args, "text")?.to_string() },
                    other => return Err(CallError::InvalidParams(format!("unknown inspect target `{other}`"))),
                };
                let dbg = self.ensure_debug()?;
                Ok(to_json(&dbg.inspect(&target).map_err(tool)?))
            }
            "dbg.raw" => {
                let command = need_str(args, "command")?;
                let dbg = self.ensure_debug()?;
                let records = dbg.raw_command(command).map_err(tool)?;
                let text: String = records
                    .iter()
                    .filter(|r| r.class == MiClass::ConsoleStream)
                    .filter_map(|r| r.text.clone())
                    .collect();
                Ok(json!({ "records": records, "text": text }))
            }
            "dbg.resume" => {
                let mark = self.guest.as_ref().map(GuestHandle::console_mark);
                let dbg = self.ensure_debug()?;
                dbg.resume().map_err(tool)?;
                let guest = self.guest.as_ref().expect("debugger implies a guest");
                let mark = mark.expect("debugger implies a guest");
                let settled = guest.settle_after_resume(mark, RESUME_SETTLE).map_err(tool)?;
                Ok(json!({ "gate": "running", "resumed": settled }))
            }
            other => Err(CallError::Tool(ToolError {
                name: "NotImplemented".into(),
                message: format!("no handler for `{other}`"),
                data: None,
            })),
        }
    }

    fn index(&mut self) -> Result<&CodeIndex, CallError> {
        if self.index.is_none() {
            let saved: PathBuf = self.env.env_dir.join(INDEX_FILE);
            let idx = if saved.is_file() {
                CodeIndex::load(&self.env.source_root, &saved)
            } else {
                CodeIndex::build(&self.env.source_root)
            };
            self.index = Some(idx.map_err(tool)?);
        }
        Ok(self.index.as_ref().expect("set above"))
    }

    fn guest_options(&self) -> GuestOptions {
        self.opts.guest.clone().unwrap_or_else(|| GuestOptions::for_backend(self.env.snapshot_ref.backend))
    }

    fn ensure_guest(&mut self) -> Result<&GuestHandle, CallError> {
        if self.guest.is_none() {
            self.start_guest(false)?;
        }
        Ok(self.guest.as_ref().expect("started"))
    }

    fn ensure_debug(&mut self) -> Result<&DebugSession, CallError> {
        if self.debug.is_none() {
            self.ensure_guest()?;
            let guest = self.guest.as_ref().expect("started");
            let session = kdbg::attach_with_timeout(guest, &self.ledger, self.opts.stub_timeout).map_err(tool)?;
            self.debug = Some(session);
        }
        Ok(self.debug.as_ref().expect("attached"))
    }

    fn start_guest(&mut self, restart: bool) -> Result<Value, CallError> {
        self.debug = None;
        if let Some(old) = self.guest.take() {
            self.drain();
            old.shutdown();
            self.episode_base = self.max_episode;
            self.gate_mark = 0;
        }
        self.guests_started += 1;
        let guest_id = format!("{}-g{}", self.env.env_id, self.guests_started);
        let handle = GuestHandle::start(&guest_id, &self.env.snapshot_ref, self.transcript.clone(), self.guest_options())
            .map_err(tool)?;
        self.guest = Some(handle);
        self.record_started(restart)
    }

    fn record_started(&mut self, restart: bool) -> Result<Value, CallError> {
        let guest = self.guest.as_ref().expect("running");
        let digest = guest.current_digest().or_else(|| guest.initial_digest()).unwrap_or_default();
        self.trace.record(EventBody::Lifecycle(LifecycleEvent::GuestStarted {
            snapshot_id: self.env.snapshot_ref.snapshot_id.clone(),
            initial_digest: digest.clone(),
            restart,
        }));
        Ok(json!({
            "guest_id": guest.guest_id(),
            "snapshot_id": self.env.snapshot_ref.snapshot_id,
            "initial_digest": digest,
            "restarts": guest.restart_count(),
        }))
    }

    /// Move new console lines and gate transitions into the trace, ordered
    /// by transcript position.
    pub fn drain(&mut self) {
        let lines = self.transcript.lines_from(self.console_mark);
        let transitions = match &self.guest {
            Some(g) => g.gate().transitions_since(self.gate_mark),
            None => Vec::new(),
        };
        self.gate_mark += transitions.len();
        let mut pending = transitions.into_iter().peekable();
        let base = self.episode_base;
        let emit_transition = |trace: &TraceRecorder, t: kdbg::GateTransition, max: &mut u64| {
            let episode = t.episode + base;
            *max = (*max).max(episode);
            let ev = match t.status {
                GateStatus::Running => LifecycleEvent::GateRunning { episode, console_mark: t.console_mark },
                GateStatus::StoppedBreakpoint { bp_id } => LifecycleEvent::GateStopped {
                    episode,
                    bp_id: Some(bp_id),
                    reason: "breakpoint-hit".into(),
                    console_mark: t.console_mark,
                },
                GateStatus::StoppedOther { reason } => {
                    LifecycleEvent::GateStopped { episode, bp_id: None, reason, console_mark: t.console_mark }
                }
            };
            trace.record(EventBody::Lifecycle(ev));
        };
        for line in lines {
            while pending.peek().is_some_and(|t| t.console_mark <= line.index) {
                emit_transition(&self.trace, pending.next().expect("peeked"), &mut self.max_episode);
            }
            self.trace.record(EventBody::Console { line_index: line.index, text: line.text });
            self.console_mark = line.index + 1;
        }
        for t in pending {
            emit_transition(&self.trace, t, &mut self.max_episode);
        }
    }

    /// Stop the guest and flush remaining console output into the trace.
    pub fn shutdown(&mut self) {
        self.debug = None;
        self.drain();
        if let Some(g) = self.guest.take() {
            g.shutdown();
        }
        self.drain();
    }
}

impl Drop for ToolSession {
    fn drop(&mut self) {
        self.debug = None;
        if let Some(g) = self.guest.take() {
            g.shutdown();
        }
    }
}

/// Why [`ToolSession::call_tool`] did not return a result.
#[derive(Debug, Clone, PartialEq)]
pub enum ToolCallFailure {
    NotFound,
    InvalidParams(String),
    Tool(ToolError),
}
