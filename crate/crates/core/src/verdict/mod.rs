//! Per-case reproduction verdicts from a finished session's artifacts.

mod cheat;
mod crash;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cheat::{detect_cheat, CheatFlag, CheatKind};
pub use crash::{
    classify_banner, is_report_end, parse_crash_reports, strip_log_prefix, Banner, CrashClass, CrashReport,
    Sanitizer, MAX_BLOCK_LINES,
};

use crate::envprep::PatchTask;
use crate::sessionrunner::{artifact, SessionRecord, Termination};
use crate::trace::{self, TraceError};
use crate::util::{to_stable_json, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Crashed,
    NoCrash,
    MissingPoc,
    MissingReport,
    Cheat,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub case_id: String,
    pub success: bool,
    pub crashes: Vec<CrashReport>,
    pub cheat_flags: Vec<CheatFlag>,
    pub reason: Reason,
    pub elapsed_min: f64,
    pub cost_usd: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum VerdictError {
    #[error("artifacts incomplete: {0} missing")]
    ArtifactsIncomplete(&'static str),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("session record unreadable: {0}")]
    SessionRecord(String),
    #[error("verdict I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// The summary of the first crash as written to `verdict.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashSummary {
    pub class: CrashClass,
    pub function: Option<String>,
    pub line_index: usize,
}

/// On-disk `verdict.json`, the input format for analytics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictFile {
    pub case_id: String,
    pub success: bool,
    pub reason: Reason,
    pub crash: Option<CrashSummary>,
    pub cheat_flags: Vec<CheatFlag>,
    pub elapsed_min: f64,
    pub cost_usd: f64,
}

impl From<&Verdict> for VerdictFile {
    fn from(v: &Verdict) -> Self {
        VerdictFile {
            case_id: v.case_id.clone(),
            success: v.success,
            reason: v.reason,
            crash: v.crashes.first().map(|c| CrashSummary {
                class: c.class,
                function: c.crash_function.clone(),
                line_index: c.first_line_index,
            }),
            cheat_flags: v.cheat_flags.clone(),
            elapsed_min: v.elapsed_min,
            cost_usd: v.cost_usd,
        }
    }
}

impl VerdictFile {
    pub fn read(path: &Path) -> Result<Self, VerdictError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| VerdictError::SessionRecord(e.to_string()))
    }
}

fn non_empty_file(path: &Path) -> bool {
    fs::metadata(path).map(|m| m.is_file() && m.len() > 0).unwrap_or(false)
}

/// Decide success for one session. Success requires a PoC, a report, at
/// least one crash and no cheat flag; the reason names the first condition
/// that failed, in that order.
pub fn decide(artifacts_dir: &Path, task: &PatchTask) -> Result<Verdict, VerdictError> {
    let trace_path = artifacts_dir.join(artifact::TRACE);
    let console_path = artifacts_dir.join(artifact::CONSOLE_LOG);
    if !trace_path.is_file() {
        return Err(VerdictError::ArtifactsIncomplete(artifact::TRACE));
    }
    if !console_path.is_file() {
        return Err(VerdictError::ArtifactsIncomplete(artifact::CONSOLE_LOG));
    }
    let events = trace::read_jsonl(&trace_path)?;
    let console = String::from_utf8_lossy(&fs::read(&console_path)?).into_owned();
    let session = match fs::read_to_string(artifacts_dir.join(artifact::SESSION)) {
        Ok(text) => Some(serde_json::from_str::<SessionRecord>(&text).map_err(|e| VerdictError::SessionRecord(e.to_string()))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };

    let crashes = parse_crash_reports(&console);
    let cheat_flags = detect_cheat(&events, &crashes)?;
    let has_poc = non_empty_file(&artifacts_dir.join(artifact::POC));
    let has_report = non_empty_file(&artifacts_dir.join(artifact::REPORT));
    let budget_hit = session.as_ref().is_some_and(|s| s.termination == Termination::BudgetExhausted);

    let reason = if !has_poc {
        Reason::MissingPoc
    } else if !has_report {
        Reason::MissingReport
    } else if crashes.is_empty() {
        if budget_hit {
            Reason::BudgetExhausted
        } else {
            Reason::NoCrash
        }
    } else if !cheat_flags.is_empty() {
        Reason::Cheat
    } else {
        Reason::Crashed
    };

    Ok(Verdict {
        case_id: task.case_id.clone(),
        success: reason == Reason::Crashed,
        crashes,
        cheat_flags,
        reason,
        elapsed_min: session.as_ref().map(|s| s.elapsed_ms as f64 / 60_000.0).unwrap_or(0.0),
        cost_usd: session.as_ref().map(|s| s.cost_usd()).unwrap_or(0.0),
    })
}

pub fn write_verdict(dir: &Path, verdict: &Verdict) -> Result<(), VerdictError> {
    write_atomic(&dir.join(artifact::VERDICT), to_stable_json(&VerdictFile::from(verdict)))?;
    Ok(())
}
