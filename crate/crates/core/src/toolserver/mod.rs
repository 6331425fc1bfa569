//! Session-scoped tool service. Tools are described by a checked-in
//! registry manifest, filtered per capability profile, and dispatched over
//! newline-delimited JSON-RPC 2.0 (`tools/list`, `tools/call`).

mod prompts;
mod rpc;
mod session;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::profile::CapabilityProfile;

pub use prompts::{assemble_prompts, PromptBundle, NO_INTERNET_CONSTRAINT, WORKFLOW_MARKERS};
pub use rpc::{RpcError, RpcRequest, RpcResponse, INTERNAL_ERROR, INVALID_PARAMS, INVALID_REQUEST, METHOD_NOT_FOUND, PARSE_ERROR, TOOL_ERROR};
pub use session::{SessionOptions, ToolCallFailure, ToolError, ToolSession, DEFAULT_UPLOAD_PATH, INDEX_FILE};

const REGISTRY_JSON: &str = include_str!("../../config/tool-registry.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCategory {
    CodeBrowsing,
    VmManagement,
    VmInteraction,
    Debugging,
}

impl ToolCategory {
    pub const ALL: [ToolCategory; 4] =
        [ToolCategory::CodeBrowsing, ToolCategory::VmManagement, ToolCategory::VmInteraction, ToolCategory::Debugging];

    pub fn as_str(&self) -> &'static str {
        match self {
            ToolCategory::CodeBrowsing => "code_browsing",
            ToolCategory::VmManagement => "vm_management",
            ToolCategory::VmInteraction => "vm_interaction",
            ToolCategory::Debugging => "debugging",
        }
    }

    /// Name prefix of the tools this category owns.
    pub fn prefix(&self) -> &'static str {
        match self {
            ToolCategory::CodeBrowsing => "code.",
            ToolCategory::VmManagement | ToolCategory::VmInteraction => "vm.",
            ToolCategory::Debugging => "dbg.",
        }
    }
}

impl fmt::Display for ToolCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToolCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ToolCategory::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown tool category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Boolean,
}

impl ParamType {
    fn matches(&self, v: &serde_json::Value) -> bool {
        match self {
            ParamType::String => v.is_string(),
            ParamType::Integer => v.is_u64() || v.is_i64(),
            ParamType::Boolean => v.is_boolean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub category: ToolCategory,
    pub description: String,
    pub params: BTreeMap<String, ParamSpec>,
}

impl ToolDescriptor {
    /// Check `args` against the parameter schema. Unknown keys are refused.
    pub fn validate_args(&self, args: &serde_json::Value) -> Result<(), String> {
        let obj = match args {
            serde_json::Value::Object(o) => o,
            serde_json::Value::Null => &serde_json::Map::new(),
            _ => return Err("arguments must be an object".into()),
        };
        for (k, v) in obj {
            let spec = self.params.get(k).ok_or_else(|| format!("unknown parameter `{k}`"))?;
            if !spec.ty.matches(v) {
                return Err(format!("parameter `{k}` must be {:?}", spec.ty).to_lowercase());
            }
        }
        for (k, spec) in &self.params {
            if spec.required && !obj.contains_key(k) {
                return Err(format!("missing required parameter `{k}`"));
            }
        }
        Ok(())
    }

    /// JSON schema form used in `tools/list`.
    pub fn input_schema(&self) -> serde_json::Value {
        let props: serde_json::Map<String, serde_json::Value> = self
            .params
            .iter()
            .map(|(k, p)| {
                let ty = match p.ty {
                    ParamType::String => "string",
                    ParamType::Integer => "integer",
                    ParamType::Boolean => "boolean",
                };
                (k.clone(), serde_json::json!({"type": ty, "description": p.description}))
            })
            .collect();
        let required: Vec<&String> = self.params.iter().filter(|(_, p)| p.required).map(|(k, _)| k).collect();
        serde_json::json!({"type": "object", "properties": props, "required": required, "additionalProperties": false})
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryManifest {
    pub version: u32,
    pub tools: Vec<ToolDescriptor>,
}

static REGISTRY: LazyLock<RegistryManifest> = LazyLock::new(|| {
    let m: RegistryManifest = serde_json::from_str(REGISTRY_JSON).expect("bundled tool registry parses");
    let mut names: Vec<&str> = m.tools.iter().map(|t| t.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), m.tools.len(), "tool names are unique");
    for t in &m.tools {
        assert!(t.name.starts_with(t.category.prefix()), "{} is in the wrong category", t.name);
    }
    m
});

/// The versioned registry manifest.
pub fn registry() -> &'static RegistryManifest {
    &REGISTRY
}

pub fn find_tool(name: &str) -> Option<&'static ToolDescriptor> {
    registry().tools.iter().find(|t| t.name == name)
}

/// Descriptors that survive `profile`, in registry order.
pub fn list_tools(profile: &CapabilityProfile) -> Vec<ToolDescriptor> {
    registry().tools.iter().filter(|t| profile.allows(t.category)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::ProfileId;

    #[test]
    fn registry_shape() {
        let all = list_tools(&CapabilityProfile::baseline());
        assert_eq!(all.len(), 12);
        let count = |c| all.iter().filter(|t| t.category == c).count();
        assert_eq!(
            ToolCategory::ALL.map(count),
            [3, 3, 2, 4],
            "code, management, interaction, debugging"
        );
    }

    #[test]
    fn profiles_filter_only_debugging() {
        for id in ProfileId::ALL {
            let tools = list_tools(&CapabilityProfile::new(id));
            let dbg = tools.iter().filter(|t| t.category == ToolCategory::Debugging).count();
            if id == ProfileId::NoGdb {
                assert_eq!((tools.len(), dbg), (8, 0));
            } else {
                assert_eq!(tools, list_tools(&CapabilityProfile::baseline()));
            }
        }
    }

    #[test]
    fn arguments_are_checked() {
        let read = find_tool("code.read").unwrap();
        assert!(read.validate_args(&serde_json::json!({"file": "a.c", "start": 1, "end": 2})).is_ok());
        assert!(read.validate_args(&serde_json::json!({"file": "a.c", "start": 1})).unwrap_err().contains("end"));
        assert!(read.validate_args(&serde_json::json!({"file": 3, "start": 1, "end": 2})).is_err());
        assert!(read.validate_args(&serde_json::json!({"file": "a", "start": 1, "end": 2, "x": 1})).is_err());
        assert!(find_tool("vm.start").unwrap().validate_args(&serde_json::Value::Null).is_ok());
    }
}
