//! Reference model of the breakpoint gate, driven against a live tool
//! session. Each step asserts the model's prediction.

use patchrepro_core::guestvm::Transcript;
use patchrepro_core::toolserver::{SessionOptions, ToolCallFailure, ToolSession};
use patchrepro_core::trace::{EventBody, LifecycleEvent, TraceRecorder};
use serde_json::{json, Value};

use super::Prepared;

pub const FUNCS: [&str; 3] = ["nf_tables_newtable", "nf_tables_newset", "nft_set_destroy"];

#[derive(Debug, Clone)]
pub enum Op {
    /// 0: no kernel entry, 1: nft (newtable), 2: PoC (newset, destroy)
    Exec(usize),
    Upload,
    Interrupt,
    SetBreak(usize),
    ClearBreaks,
    Resume,
    Registers,
}

fn calls(kind: usize) -> &'static [usize] {
    match kind {
        0 => &[],
        1 => &[0],
        _ => &[1, 2],
    }
}

/// Reference model. At most one breakpoint exists at a time, so a resumed
/// command never stops a second time behind the caller's back.
#[derive(Default)]
pub struct Model {
    stopped: bool,
    bp: Option<(u32, usize)>,
    uploaded: bool,
}

pub struct Harness {
    pub session: ToolSession,
    pub model: Model,
    pub log: Vec<String>,
}

/// Stops on a breakpoint, refuses while stopped, resumes, and stops again
/// on a breakpoint hit by the uploaded PoC.
pub const STOP_RESUME_CYCLE: [Op; 18] = [
    Op::Exec(0),
    Op::SetBreak(0),
    Op::Exec(1),
    Op::Exec(0),
    Op::Upload,
    Op::Interrupt,
    Op::Registers,
    Op::Resume,
    Op::Exec(0),
    Op::Resume,
    Op::ClearBreaks,
    Op::Exec(1),
    Op::Upload,
    Op::SetBreak(2),
    Op::Exec(2),
    Op::Exec(2),
    Op::Resume,
    Op::Exec(0),
];

pub fn halted(r: &Result<Value, ToolCallFailure>) -> bool {
    matches!(r, Err(ToolCallFailure::Tool(t)) if t.name == "DebuggeeHalted")
}

impl Harness {
    pub fn new(p: Prepared) -> Self {
        let session = ToolSession::new(p.env, p.profile, TraceRecorder::new(), Transcript::new(), SessionOptions::default());
        Self { session, model: Model::default(), log: Vec::new() }
    }

    pub fn call(&mut self, name: &str, args: Value) -> Result<Value, ToolCallFailure> {
        let r = self.session.call_tool(name, args.clone());
        self.log.push(format!("{name} {args} -> {}", if r.is_ok() { "ok".into() } else { format!("{r:?}") }));
        r
    }

    pub fn step(&mut self, op: &Op) {
        let m = &self.model;
        match *op {
            Op::Exec(kind) => {
                let command = match kind {
                    0 => "cat /proc/version",
                    1 => "nft add table inet t",
                    _ if m.uploaded => "/root/poc",
                    _ => return,
                };
                let was_stopped = m.stopped;
                let hits = m.bp.is_some_and(|(_, f)| calls(kind).contains(&f));
                let r = self.call("vm.exec", json!({ "command": command, "timeout_s": 10 }));
                let expect = was_stopped || hits;
                assert_eq!(halted(&r), expect, "{}", self.log.join("\n"));
                if !expect {
                    assert!(r.is_ok(), "{}", self.log.join("\n"));
                }
                self.model.stopped = expect;
            }
            Op::Upload => {
                let stopped = m.stopped;
                let r = self.call("vm.compile_upload", json!({ "source": "int main(void){return 0;}\n" }));
                assert_eq!(halted(&r), stopped, "{}", self.log.join("\n"));
                if r.is_ok() {
                    self.model.uploaded = true;
                }
            }
            Op::Interrupt => {
                let stopped = m.stopped;
                let r = self.call("vm.signal", json!({ "signal": "interrupt" }));
                assert_eq!(halted(&r), stopped, "{}", self.log.join("\n"));
            }
            Op::SetBreak(f) => {
                if m.bp.is_some() {
                    return;
                }
                let r = self.call("dbg.breakpoint", json!({ "action": "set", "location": FUNCS[f] })).unwrap();
                let id = r["breakpoints"].as_array().unwrap().last().unwrap()["id"].as_u64().unwrap() as u32;
                self.model.bp = Some((id, f));
            }
            Op::ClearBreaks => {
                if let Some((id, _)) = m.bp {
                    self.call("dbg.breakpoint", json!({ "action": "delete", "id": id })).unwrap();
                    self.model.bp = None;
                }
            }
            Op::Resume => {
                let stopped = m.stopped;
                let r = self.call("dbg.resume", json!({}));
                assert_eq!(r.is_ok(), stopped, "{}", self.log.join("\n"));
                self.model.stopped = false;
            }
            Op::Registers => {
                // Inspection never moves the gate.
                let _ = self.call("dbg.inspect", json!({ "what": "registers" }));
            }
        }
    }

    /// Every refusal in the trace lies inside a stop episode.
    pub fn check_trace(&mut self) {
        self.session.drain();
        let events = self.session.trace().snapshot();
        let mut stopped = false;
        let mut pending: Option<bool> = None;
        for e in &events {
            match &e.body {
                EventBody::Lifecycle(LifecycleEvent::GateStopped { .. }) => {
                    stopped = true;
                    if pending == Some(false) {
                        // the call itself ran into the breakpoint
                        pending = Some(true);
                    }
                }
                EventBody::Lifecycle(LifecycleEvent::GateRunning { .. }) => stopped = false,
                EventBody::ToolCall { tool, .. } if tool.starts_with("vm.") && tool != "vm.start" => pending = Some(stopped),
                EventBody::ToolResult { tool, error, .. } if tool.starts_with("vm.") && tool != "vm.start" => {
                    let refused = error.as_deref().is_some_and(|e| e.starts_with("DebuggeeHalted"));
                    let inside = pending.take().unwrap_or(stopped) || stopped;
                    assert!(!refused || inside, "refusal outside a stop: {e:?}\n{}", self.log.join("\n"));
                    assert!(refused || !inside || tool == "vm.restart", "admitted inside a stop: {e:?}\n{}", self.log.join("\n"));
                }
                _ => {}
            }
        }
    }
}
