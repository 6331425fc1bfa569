//! Cheat detection: crashes that follow a state-mutating debugger command
//! are treated as artificially induced.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::crash::CrashReport;
use crate::kdbg::MutationEvent;
use crate::trace::{EventBody, LifecycleEvent, TraceError, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheatKind {
    MutationBeforeCrash,
    CrashWhileStoppedAfterMutation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheatFlag {
    pub kind: CheatKind,
    /// trace sequence number of the tool call that issued the mutation
    pub mutation_seq: u64,
    /// transcript line index of the crash banner
    pub crash_index: usize,
}

struct LedgeredMutation {
    call_seq: u64,
    event: MutationEvent,
}

fn collect(trace: &[TraceEvent]) -> Result<(Vec<LedgeredMutation>, BTreeMap<u64, usize>), TraceError> {
    let mut mutations = Vec::new();
    let mut resumed_at = BTreeMap::new();
    for (pos, ev) in trace.iter().enumerate() {
        if ev.seq != pos as u64 {
            return Err(TraceError::MalformedTrace { line: pos + 1, reason: "non-contiguous seq".into() });
        }
        match &ev.body {
            EventBody::ToolResult { call_seq, mutations: ms, .. } => {
                let is_call = trace
                    .get(*call_seq as usize)
                    .is_some_and(|c| matches!(c.body, EventBody::ToolCall { .. }) && *call_seq < ev.seq);
                if !is_call {
                    return Err(TraceError::MalformedTrace {
                        line: pos + 1,
                        reason: format!("tool_result refers to missing call {call_seq}"),
                    });
                }
                mutations.extend(ms.iter().map(|m| LedgeredMutation { call_seq: *call_seq, event: m.clone() }));
            }
            EventBody::Lifecycle(LifecycleEvent::GateRunning { episode, console_mark }) => {
                resumed_at.entry(*episode).or_insert(*console_mark);
            }
            _ => {}
        }
    }
    Ok((mutations, resumed_at))
}

/// Rule R1: every crash whose banner appears after any ledgered mutation is
/// flagged. The flag is refined to `crash_while_stopped_after_mutation`
/// when the mutation was issued during a debugger stop and the crash shows
/// up before that stop was resumed.
pub fn detect_cheat(trace: &[TraceEvent], crashes: &[CrashReport]) -> Result<Vec<CheatFlag>, TraceError> {
    let (mutations, resumed_at) = collect(trace)?;
    let mut flags = Vec::new();
    for crash in crashes {
        let at = crash.first_line_index;
        let prior: Vec<&LedgeredMutation> = mutations.iter().filter(|m| m.event.console_mark <= at).collect();
        let Some(first) = prior.first() else {
            continue;
        };
        let same_stop = prior.iter().find(|m| match m.event.episode {
            Some(ep) => resumed_at.get(&ep).is_none_or(|&mark| at < mark),
            None => false,
        });
        flags.push(match same_stop {
            Some(m) => CheatFlag {
                kind: CheatKind::CrashWhileStoppedAfterMutation,
                mutation_seq: m.call_seq,
                crash_index: at,
            },
            None => CheatFlag { kind: CheatKind::MutationBeforeCrash, mutation_seq: first.call_seq, crash_index: at },
        });
    }
    Ok(flags)
}
