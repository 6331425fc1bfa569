//! Tool-usage measures reconstructed from a trace: per-category counts,
//! PoC iterations, breakpoints, guest utility invocations and procfs/sysfs
//! accesses.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::toolserver::{find_tool, ToolCategory};
use crate::trace::{self, EventBody, LifecycleEvent, TraceError, TraceEvent};

/// Utilities counted by default when scanning guest commands.
pub const DEFAULT_SCANNED_UTILITIES: &[&str] =
    &["nft", "tc", "ip", "iptables", "ipset", "unshare", "modprobe", "sysctl", "ethtool", "bpftool"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageCounters {
    pub by_category: BTreeMap<ToolCategory, u64>,
    pub by_tool: BTreeMap<String, u64>,
    pub poc_iterations: u64,
    pub breakpoints_set: u64,
    pub breakpoints_hit: u64,
    pub utility_invocations: BTreeMap<String, u64>,
    pub procfs_accesses: u64,
    pub sysfs_accesses: u64,
    /// per-path counts of `/proc/...` and `/sys/...` references
    pub pseudo_fs_paths: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub seq: u64,
    pub t_rel_ms: u64,
    pub tool: String,
    pub ok: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub counters: UsageCounters,
    pub timeline: Vec<TimelineEntry>,
}

/// Words that start a simple command, for each command of a shell line.
fn command_words(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    for segment in line.split([';', '|', '&', '\n', '(', ')', '`']) {
        let mut words = segment.split_whitespace().filter(|w| !w.contains('='));
        let mut first = words.next();
        while let Some(w) = first {
            if matches!(w, "sudo" | "exec" | "time" | "nohup" | "busybox" | "env" | "!" | "then" | "do" | "else") {
                first = words.next();
            } else {
                break;
            }
        }
        if let Some(w) = first {
            let w = w.trim_matches(['"', '\'']);
            out.push(w.rsplit('/').next().unwrap_or(w).to_string());
        }
    }
    out
}

fn pseudo_fs_paths(text: &str, prefix: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(p) = rest.find(prefix) {
        let tail = &rest[p..];
        let end = tail
            .find(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | ';' | '|' | '&' | '>' | '<' | ')' | '`'))
            .unwrap_or(tail.len());
        out.push(tail[..end].to_string());
        rest = &tail[prefix.len()..];
    }
    out
}

impl UsageCounters {
    /// Count one tool call. `result` is the tool's result on success.
    pub fn observe_call(&mut self, tool: &str, args: &Value, ok: bool, utilities: &[String]) {
        *self.by_tool.entry(tool.to_string()).or_default() += 1;
        if let Some(d) = find_tool(tool) {
            *self.by_category.entry(d.category).or_default() += 1;
        }
        match tool {
            "vm.compile_upload" => self.poc_iterations += 1,
            "dbg.breakpoint" if ok && args.get("action").and_then(Value::as_str) == Some("set") => {
                self.breakpoints_set += 1
            }
            "vm.exec" => {
                let cmd = args.get("command").and_then(Value::as_str).unwrap_or("");
                for w in command_words(cmd) {
                    if utilities.iter().any(|u| *u == w) {
                        *self.utility_invocations.entry(w).or_default() += 1;
                    }
                }
                for p in pseudo_fs_paths(cmd, "/proc/") {
                    self.procfs_accesses += 1;
                    *self.pseudo_fs_paths.entry(p).or_default() += 1;
                }
                for p in pseudo_fs_paths(cmd, "/sys/") {
                    self.sysfs_accesses += 1;
                    *self.pseudo_fs_paths.entry(p).or_default() += 1;
                }
            }
            _ => {}
        }
    }

    pub fn observe_breakpoint_hit(&mut self) {
        self.breakpoints_hit += 1;
    }
}

pub fn default_utilities() -> Vec<String> {
    DEFAULT_SCANNED_UTILITIES.iter().map(|s| s.to_string()).collect()
}

/// Rebuild the usage measures from trace events.
pub fn replay_events(events: &[TraceEvent], utilities: &[String]) -> ReplaySummary {
    let mut summary = ReplaySummary::default();
    let mut calls: BTreeMap<u64, (&str, &Value)> = BTreeMap::new();
    for ev in events {
        match &ev.body {
            EventBody::ToolCall { tool, args, .. } => {
                calls.insert(ev.seq, (tool, args));
                summary.timeline.push(TimelineEntry { seq: ev.seq, t_rel_ms: ev.t_rel_ms, tool: tool.clone(), ok: None });
            }
            EventBody::ToolResult { call_seq, ok, .. } => {
                if let Some((tool, args)) = calls.get(call_seq) {
                    summary.counters.observe_call(tool, args, *ok, utilities);
                }
                if let Some(t) = summary.timeline.iter_mut().rev().find(|t| t.seq == *call_seq) {
                    t.ok = Some(*ok);
                }
            }
            EventBody::Lifecycle(LifecycleEvent::GateStopped { bp_id: Some(_), .. }) => {
                summary.counters.observe_breakpoint_hit();
            }
            _ => {}
        }
    }
    summary
}

pub fn replay_trace(path: &Path, utilities: &[String]) -> Result<ReplaySummary, TraceError> {
    Ok(replay_events(&trace::read_jsonl(path)?, utilities))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_words_find_utilities() {
        assert_eq!(command_words("nft add table inet t && /sbin/tc qdisc show"), vec!["nft", "tc"]);
        assert_eq!(command_words("FOO=1 sudo ip link; echo nft"), vec!["ip", "echo"]);
        assert_eq!(command_words("cat /proc/crypto | grep aes"), vec!["cat", "grep"]);
    }

    #[test]
    fn pseudo_fs_scan() {
        assert_eq!(pseudo_fs_paths("cat /proc/crypto /proc/self/maps>x", "/proc/"), vec!["/proc/crypto", "/proc/self/maps"]);
        assert!(pseudo_fs_paths("ls /tmp", "/sys/").is_empty());
    }
}
