//! Model client contract and the scripted client used for deterministic
//! sessions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::budget::Usage;
use crate::toolserver::{PromptBundle, ToolDescriptor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionKind {
    ToolCall { name: String, args: Value },
    Finalize { poc_source: String, report: String },
    GiveUp { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAction {
    #[serde(flatten)]
    pub kind: ActionKind,
    #[serde(default)]
    pub usage: Usage,
}

impl ModelAction {
    /// `finalize` must carry a non-empty PoC and report.
    pub fn validate(&self) -> Result<(), String> {
        match &self.kind {
            ActionKind::Finalize { poc_source, report } if poc_source.trim().is_empty() || report.trim().is_empty() => {
                Err("finalize needs a non-empty poc_source and report".into())
            }
            _ => Ok(()),
        }
    }
}

/// One completed step as the model sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub action: ModelAction,
    /// tool result, or `{"error": ...}`; null for non-tool actions
    pub response: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model client failed: {0}")]
    Client(String),
    #[error("model returned an invalid action: {0}")]
    InvalidAction(String),
}

/// Synchronous request/response model contract with full visible history.
pub trait ModelClient {
    fn label(&self) -> String;

    fn next_action(
        &mut self,
        prompts: &PromptBundle,
        tools: &[ToolDescriptor],
        history: &[HistoryEntry],
    ) -> Result<ModelAction, ModelError>;
}

/// One step of a script file. File references resolve against the
/// script's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    #[serde(default)]
    pub tool: Option<String>,
    #[serde(default)]
    pub args: Option<Value>,
    /// for `vm.compile_upload`: file whose text becomes `args.source`
    #[serde(default)]
    pub source_file: Option<String>,
    #[serde(default)]
    pub finalize: Option<ScriptFinalize>,
    #[serde(default)]
    pub give_up: Option<String>,
    #[serde(default)]
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptFinalize {
    #[serde(default)]
    pub poc_source: Option<String>,
    #[serde(default)]
    pub poc_file: Option<String>,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default = "default_label")]
    pub label: String,
    pub steps: Vec<ScriptStep>,
    /// restart from this step when the script runs out, instead of giving up
    #[serde(default)]
    pub loop_from: Option<usize>,
}

fn default_label() -> String {
    "scripted".into()
}

/// Replays a fixed action list, ignoring tool results.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    label: String,
    actions: Vec<ModelAction>,
    loop_from: Option<usize>,
    pos: usize,
}

impl ScriptedModel {
    pub fn new(label: &str, actions: Vec<ModelAction>) -> Self {
        Self { label: label.into(), actions, loop_from: None, pos: 0 }
    }

    pub fn looping(mut self, from: usize) -> Self {
        self.loop_from = Some(from);
        self
    }

    pub fn from_file(path: &Path) -> Result<Self, ModelError> {
        let bad = |e: String| ModelError::Client(format!("{}: {e}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let script: Script = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Self::from_script(script, &dir).map_err(bad)
    }

    pub fn from_script(script: Script, dir: &Path) -> Result<Self, String> {
        let read = |f: &str| std::fs::read_to_string(dir.join(f)).map_err(|e| format!("{f}: {e}"));
        let mut actions = Vec::new();
        for (i, step) in script.steps.into_iter().enumerate() {
            let kind = match (step.tool, step.finalize, step.give_up) {
                (Some(name), None, None) => {
                    let mut args = step.args.unwrap_or_else(|| Value::Object(Default::default()));
                    if let Some(f) = &step.source_file {
                        args["source"] = Value::String(read(f)?);
                    }
                    ActionKind::ToolCall { name, args }
                }
                (None, Some(fin), None) => {
                    let poc_source = match (fin.poc_source, fin.poc_file) {
                        (Some(s), None) => s,
                        (None, Some(f)) => read(&f)?,
                        _ => return Err(format!("step {i}: finalize needs exactly one of poc_source, poc_file")),
                    };
                    ActionKind::Finalize { poc_source, report: fin.report }
                }
                (None, None, Some(reason)) => ActionKind::GiveUp { reason },
                _ => return Err(format!("step {i}: exactly one of tool, finalize, give_up")),
            };
            actions.push(ModelAction { kind, usage: step.usage });
        }
        if let Some(l) = script.loop_from {
            if l >= actions.len() {
                return Err(format!("loop_from {l} is past the last step"));
            }
        }
        Ok(Self { label: script.label, actions, loop_from: script.loop_from, pos: 0 })
    }
}

impl ModelClient for ScriptedModel {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn next_action(&mut self, _: &PromptBundle, _: &[ToolDescriptor], _: &[HistoryEntry]) -> Result<ModelAction, ModelError> {
        if self.pos >= self.actions.len() {
            match self.loop_from {
                Some(l) => self.pos = l,
                None => {
                    return Ok(ModelAction {
                        kind: ActionKind::GiveUp { reason: "script exhausted".into() },
                        usage: Usage::default(),
                    })
                }
            }
        }
        let a = self.actions[self.pos].clone();
        self.pos += 1;
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_steps_resolve_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.c"), "int main(){}").unwrap();
        let script: Script = serde_json::from_value(serde_json::json!({
            "steps": [
                {"tool": "vm.compile_upload", "source_file": "t.c", "usage": {"input_tokens": 5, "output_tokens": 1}},
                {"finalize": {"poc_file": "t.c", "report": "r"}}
            ]
        }))
        .unwrap();
        let mut m = ScriptedModel::from_script(script, dir.path()).unwrap();
        let p = crate::toolserver::assemble_prompts(
            &crate::envprep::PatchTask {
                case_id: "c".into(),
                commit_id: String::new(),
                parent_commit_id: String::new(),
                diff_text: "d".into(),
                commit_message: None,
                subsystem_label: None,
                vuln_type: None,
                is_race: None,
                commit_msg_level: None,
                submit_time: None,
                ablations: Default::default(),
            },
            &crate::profile::CapabilityProfile::baseline(),
        );
        let a = m.next_action(&p, &[], &[]).unwrap();
        assert_eq!(a.kind, ActionKind::ToolCall { name: "vm.compile_upload".into(), args: serde_json::json!({"source": "int main(){}"}) });
        assert_eq!(a.usage.input_tokens, 5);
        assert!(matches!(m.next_action(&p, &[], &[]).unwrap().kind, ActionKind::Finalize { .. }));
        assert!(matches!(m.next_action(&p, &[], &[]).unwrap().kind, ActionKind::GiveUp { .. }));
    }

    #[test]
    fn finalize_must_be_complete() {
        let a = ModelAction { kind: ActionKind::Finalize { poc_source: " ".into(), report: "r".into() }, usage: Usage::default() };
        assert!(a.validate().is_err());
    }
}
