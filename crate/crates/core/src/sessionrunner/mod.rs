//! Drives one reproduction session: a model client alternates with tool
//! dispatch under a time and cost budget, and the trajectory is written as
//! a fixed set of artifacts.

mod budget;
mod model;
mod replay;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use budget::{account_usage, Budget, PriceTable, Usage, DEFAULT_WALL_CLOCK_LIMIT};
pub use model::{ActionKind, HistoryEntry, ModelAction, ModelClient, ModelError, Script, ScriptFinalize, ScriptStep, ScriptedModel};
pub use replay::{default_utilities, replay_events, replay_trace, ReplaySummary, TimelineEntry, UsageCounters, DEFAULT_SCANNED_UTILITIES};

use crate::envprep::{PatchTask, ReproEnvironment};
use crate::guestvm::Transcript;
use crate::profile::CapabilityProfile;
use crate::toolserver::{assemble_prompts, list_tools, RpcRequest, SessionOptions, ToolSession, INTERNAL_ERROR};
use crate::trace::{EventBody, LifecycleEvent, TraceEvent, TraceRecorder};
use crate::util::{to_stable_json, write_atomic};

/// Fixed artifact names inside a session directory.
pub mod artifact {
    pub const POC: &str = "poc.c";
    pub const REPORT: &str = "report.md";
    pub const TRACE: &str = "trace.jsonl";
    pub const CONSOLE_LOG: &str = "console.log";
    pub const SESSION: &str = "session.json";
    pub const PROMPTS: &str = "prompts.json";
    pub const VERDICT: &str = "verdict.json";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Finalized,
    BudgetExhausted,
    ModelGaveUp,
    FatalError,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Finalized => "finalized",
            Termination::BudgetExhausted => "budget_exhausted",
            Termination::ModelGaveUp => "model_gave_up",
            Termination::FatalError => "fatal_error",
        }
    }
}

/// Contents of `session.json`: accounting and termination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub case_id: String,
    pub profile: String,
    pub model_label: String,
    pub termination: Termination,
    pub elapsed_ms: u64,
    pub wall_clock_limit_ms: u64,
    #[serde(with = "rust_decimal::serde::str")]
    pub cost: Decimal,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub model_steps: u64,
    pub counters: UsageCounters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl SessionRecord {
    pub fn cost_usd(&self) -> f64 {
        self.cost.to_f64().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionArtifacts {
    pub dir: PathBuf,
    pub record: SessionRecord,
    pub poc: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub trace: PathBuf,
    pub console_log: PathBuf,
}

impl SessionArtifacts {
    pub fn trace_events(&self) -> Result<Vec<TraceEvent>, crate::trace::TraceError> {
        crate::trace::read_jsonl(&self.trace)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("tool server failed; artifacts flushed to {}", .0.dir.display())]
    FatalToolServerError(Box<SessionArtifacts>),
    #[error("session I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub session: SessionOptions,
    /// utility names counted in guest commands; empty uses the defaults
    pub utilities: Vec<String>,
}

/// Run one session and write its artifacts to `out_dir`. A scripted model
/// on the mock backend yields the same trace on every run, timing aside.
pub fn run_session(
    task: &PatchTask,
    env: &ReproEnvironment,
    model: &mut dyn ModelClient,
    profile: &CapabilityProfile,
    budget: &Budget,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<SessionArtifacts, SessionError> {
    budget.validate().map_err(SessionError::InvalidBudget)?;
    fs::create_dir_all(out_dir)?;
    for name in [artifact::POC, artifact::REPORT, artifact::VERDICT] {
        let p = out_dir.join(name);
        if p.exists() {
            fs::remove_file(p)?;
        }
    }
    let utilities = if opts.utilities.is_empty() { default_utilities() } else { opts.utilities.clone() };

    let mut task = task.clone();
    if profile.strips_commit_message() {
        task.commit_message = None;
    }
    let start = Instant::now();
    let trace = TraceRecorder::starting_at(start);
    let transcript = Transcript::starting_at(start);
    trace.record(EventBody::Lifecycle(LifecycleEvent::SessionStart {
        case_id: task.case_id.clone(),
        profile: profile.id.to_string(),
    }));
    let prompts = assemble_prompts(&task, profile);
    write_atomic(&out_dir.join(artifact::PROMPTS), to_stable_json(&prompts))?;
    let tools = list_tools(profile);
    let mut server = ToolSession::new(env.clone(), profile.clone(), trace.clone(), transcript.clone(), opts.session.clone());

    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut usage: Vec<Usage> = Vec::new();
    let mut counters = UsageCounters::default();
    let mut next_id = 1u64;
    let mut finalized: Option<(String, String)> = None;
    let mut detail = None;

    let termination = loop {
        let cost = account_usage(&usage, &budget.price_table);
        if start.elapsed() >= budget.wall_clock_limit || budget.cost_limit.is_some_and(|l| cost >= l) {
            break Termination::BudgetExhausted;
        }
        let action = match model.next_action(&prompts, &tools, &history) {
            Ok(a) => a,
            Err(e) => {
                detail = Some(e.to_string());
                break Termination::FatalError;
            }
        };
        trace.record(EventBody::ModelUsage { input_tokens: action.usage.input_tokens, output_tokens: action.usage.output_tokens });
        usage.push(action.usage);
        if let Err(e) = action.validate() {
            history.push(HistoryEntry { action, response: json!({ "error": e }) });
            continue;
        }
        match &action.kind {
            ActionKind::ToolCall { name, args } => {
                let req = RpcRequest::tool_call(next_id, name, args.clone());
                next_id += 1;
                let resp = server.dispatch(&req).expect("requests carry an id");
                let (ok, response) = match (resp.result, resp.error) {
                    (Some(r), _) => (true, r),
                    (None, Some(e)) => {
                        if e.code == INTERNAL_ERROR {
                            detail = Some(e.message.clone());
                            history.push(HistoryEntry { action: action.clone(), response: json!({ "error": e }) });
                            break Termination::FatalError;
                        }
                        (false, json!({ "error": e }))
                    }
                    (None, None) => (false, Value::Null),
                };
                if crate::toolserver::find_tool(name).is_some_and(|d| profile.allows(d.category)) {
                    counters.observe_call(name, args, ok, &utilities);
                }
                history.push(HistoryEntry { action, response });
            }
            ActionKind::Finalize { poc_source, report } => {
                finalized = Some((poc_source.clone(), report.clone()));
                history.push(HistoryEntry { action, response: Value::Null });
                break Termination::Finalized;
            }
            ActionKind::GiveUp { reason } => {
                detail = Some(reason.clone());
                history.push(HistoryEntry { action, response: Value::Null });
                break Termination::ModelGaveUp;
            }
        }
    };

    server.shutdown();
    for ev in trace.snapshot() {
        if let EventBody::Lifecycle(LifecycleEvent::GateStopped { bp_id: Some(_), .. }) = ev.body {
            counters.observe_breakpoint_hit();
        }
    }
    trace.record(EventBody::Lifecycle(LifecycleEvent::SessionEnd { termination: termination.as_str().into() }));
    drop(server);

    let (mut poc, mut report) = (None, None);
    if let Some((src, rep)) = &finalized {
        let p = out_dir.join(artifact::POC);
        write_atomic(&p, src)?;
        poc = Some(p);
        let r = out_dir.join(artifact::REPORT);
        write_atomic(&r, rep)?;
        report = Some(r);
    }
    let trace_path = out_dir.join(artifact::TRACE);
    write_atomic(&trace_path, trace.to_jsonl())?;
    let console_path = out_dir.join(artifact::CONSOLE_LOG);
    write_atomic(&console_path, transcript.render())?;
    let totals = usage.iter().fold((0, 0), |(i, o), u| (i + u.input_tokens, o + u.output_tokens));
    let record = SessionRecord {
        case_id: task.case_id.clone(),
        profile: profile.id.to_string(),
        model_label: model.label(),
        termination,
        elapsed_ms: start.elapsed().as_millis() as u64,
        wall_clock_limit_ms: budget.wall_clock_limit.as_millis() as u64,
        cost: account_usage(&usage, &budget.price_table),
        input_tokens: totals.0,
        output_tokens: totals.1,
        model_steps: usage.len() as u64,
        counters,
        detail,
    };
    write_atomic(&out_dir.join(artifact::SESSION), to_stable_json(&record))?;
    let artifacts = SessionArtifacts {
        dir: out_dir.to_path_buf(),
        record,
        poc,
        report,
        trace: trace_path,
        console_log: console_path,
    };
    if termination == Termination::FatalError && artifacts.record.detail.as_deref().is_some_and(|d| d.contains("panicked")) {
        return Err(SessionError::FatalToolServerError(Box::new(artifacts)));
    }
    Ok(artifacts)
}

/// Tool-call counts per category from a session's counters, keyed by the
/// category's wire name.
pub fn category_counts(counters: &UsageCounters) -> BTreeMap<String, u64> {
    counters.by_category.iter().map(|(k, v)| (k.as_str().to_string(), *v)).collect()
}
