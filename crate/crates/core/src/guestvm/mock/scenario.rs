//! Scenario files for the mock guest and the self-contained image built
//! from them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::util::{to_stable_json, write_atomic};

/// Utilities every mock guest provides unless a scenario lists its own.
pub const DEFAULT_UTILITIES: &[&str] = &[
    "sh", "busybox", "cat", "ls", "echo", "grep", "head", "tail", "ps", "mount", "ip", "tc", "nft", "iptables",
    "ipset", "modprobe", "sysctl", "unshare", "dmesg", "id", "uname", "sleep", "chmod", "mkdir", "rm", "touch",
];

fn default_true() -> bool {
    true
}

fn default_hostname() -> String {
    "syzkaller".into()
}

fn default_release() -> String {
    "6.1.0-repro".into()
}

fn default_utilities() -> Vec<String> {
    DEFAULT_UTILITIES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuestScenario {
    pub name: String,
    /// lines printed by a cold boot before the first prompt
    #[serde(default)]
    pub banner: Vec<String>,
    /// `false` models a kernel that never reaches a shell
    #[serde(default = "default_true")]
    pub boots: bool,
    #[serde(default)]
    pub boot_delay_ms: u64,
    #[serde(default = "default_hostname")]
    pub hostname: String,
    #[serde(default = "default_release")]
    pub kernel_release: String,
    /// absolute guest path to text content
    #[serde(default)]
    pub files: BTreeMap<String, String>,
    #[serde(default = "default_utilities")]
    pub utilities: Vec<String>,
    /// checked in order; the first match handles the command segment
    #[serde(default)]
    pub rules: Vec<CommandRule>,
    #[serde(default)]
    pub debugger: DebuggerFixture,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandRule {
    /// regex over one command segment
    #[serde(default)]
    pub pattern: Option<String>,
    /// basename of an uploaded program, or `*` for any uploaded program
    #[serde(default)]
    pub program: Option<String>,
    #[serde(default)]
    pub requires_flag: Option<String>,
    #[serde(default)]
    pub response: String,
    /// kernel functions the command enters, in order (breakpoint sites)
    #[serde(default)]
    pub calls: Vec<String>,
    #[serde(default)]
    pub set_flag: Option<String>,
    #[serde(default)]
    pub duration_ms: u64,
    #[serde(default)]
    pub post: PostState,
    /// overrides of `post`, checked after `calls`; first set flag wins
    #[serde(default)]
    pub post_if_flag: Vec<FlagPost>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashEmission {
    /// crash text file, relative to the scenario file
    pub file: String,
    /// the kernel stops after the report: no prompt, input ignored
    #[serde(default = "default_true")]
    pub halt: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostState {
    #[default]
    Ok,
    Hang,
    EmitCrash(CrashEmission),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagPost {
    pub flag: String,
    pub post: PostState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolFixture {
    pub address: String,
    #[serde(default)]
    pub file: String,
    #[serde(default)]
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterFixture {
    pub name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRegion {
    pub address: String,
    pub hex: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebuggerEffect {
    /// regex over debugger command or expression text
    pub pattern: String,
    #[serde(default)]
    pub set_flag: Option<String>,
    #[serde(default)]
    pub emit_crash: Option<CrashEmission>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebuggerFixture {
    #[serde(default)]
    pub symbols: BTreeMap<String, SymbolFixture>,
    #[serde(default)]
    pub registers: Vec<RegisterFixture>,
    #[serde(default)]
    pub memory: Vec<MemoryRegion>,
    /// expression text to printed value
    #[serde(default)]
    pub values: BTreeMap<String, String>,
    #[serde(default)]
    pub effects: Vec<DebuggerEffect>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

/// Scenario plus every crash text it references, so that an image file
/// is usable without the fixture tree it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockImage {
    pub scenario: GuestScenario,
    pub crash_texts: BTreeMap<String, String>,
    pub removed_utilities: BTreeSet<String>,
}

impl GuestScenario {
    fn crash_files(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut add = |p: &PostState| {
            if let PostState::EmitCrash(c) = p {
                out.insert(c.file.clone());
            }
        };
        for r in &self.rules {
            add(&r.post);
            r.post_if_flag.iter().for_each(|fp| add(&fp.post));
        }
        for e in &self.debugger.effects {
            if let Some(c) = &e.emit_crash {
                out.insert(c.file.clone());
            }
        }
        out
    }

    fn validate(&self) -> Result<(), String> {
        for (i, r) in self.rules.iter().enumerate() {
            if r.pattern.is_none() && r.program.is_none() {
                return Err(format!("rule {i} has neither pattern nor program"));
            }
            if let Some(p) = &r.pattern {
                Regex::new(p).map_err(|e| format!("rule {i} pattern: {e}"))?;
            }
        }
        for (i, e) in self.debugger.effects.iter().enumerate() {
            Regex::new(&e.pattern).map_err(|err| format!("effect {i} pattern: {err}"))?;
        }
        for m in &self.debugger.memory {
            super::parse_address(&m.address).ok_or_else(|| format!("bad memory address {}", m.address))?;
            hex::decode(&m.hex).map_err(|e| format!("memory {}: {e}", m.address))?;
        }
        Ok(())
    }
}

impl MockImage {
    /// Load a scenario and inline the crash texts it references.
    pub fn from_scenario_file(path: &Path) -> Result<Self, ScenarioError> {
        let io = |source| ScenarioError::Io { path: path.to_path_buf(), source };
        let invalid = |reason: String| ScenarioError::Invalid { path: path.to_path_buf(), reason };
        let text = std::fs::read_to_string(path).map_err(io)?;
        let scenario: GuestScenario = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        scenario.validate().map_err(invalid)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut crash_texts = BTreeMap::new();
        for file in scenario.crash_files() {
            let p = dir.join(&file);
            let text = std::fs::read_to_string(&p)
                .map_err(|e| invalid(format!("crash file {}: {e}", p.display())))?;
            crash_texts.insert(file, text);
        }
        Ok(Self { scenario, crash_texts, removed_utilities: BTreeSet::new() })
    }

    pub fn read(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| ScenarioError::Invalid { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        write_atomic(path, to_stable_json(self))
    }

    /// Remove utilities from the image; later invocations are not found.
    pub fn remove_utilities<S: AsRef<str>>(&mut self, names: &[S]) {
        for n in names {
            self.removed_utilities.insert(n.as_ref().to_string());
        }
    }
}
