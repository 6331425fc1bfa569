//! Model client that forwards each step to an HTTP endpoint.
//!
//! Request body: `{"label", "prompts", "tools", "history"}`, where `tools`
//! carries each descriptor plus its `input_schema`. The response body is one
//! action: `{"kind": "tool_call"|"finalize"|"give_up", ..., "usage": {...}}`.

use patchrepro_core::sessionrunner::{HistoryEntry, ModelAction, ModelClient, ModelError};
use patchrepro_core::toolserver::{PromptBundle, ToolDescriptor};
use serde_json::{json, Value};

pub struct HttpModel {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpModel {
    pub fn new(endpoint: &str) -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        Self { endpoint: endpoint.to_string(), agent: config.into() }
    }
}

impl ModelClient for HttpModel {
    fn label(&self) -> String {
        format!("external:{}", self.endpoint)
    }

    fn next_action(
        &mut self,
        prompts: &PromptBundle,
        tools: &[ToolDescriptor],
        history: &[HistoryEntry],
    ) -> Result<ModelAction, ModelError> {
        let tools: Vec<Value> = tools
            .iter()
            .map(|t| json!({"name": t.name, "category": t.category, "description": t.description, "input_schema": t.input_schema()}))
            .collect();
        let body = json!({"label": self.label(), "prompts": prompts, "tools": tools, "history": history});
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| ModelError::Client(e.to_string()))?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| ModelError::Client(e.to_string()))?;
        if !status.is_success() {
            return Err(ModelError::Client(format!("endpoint answered {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| ModelError::InvalidAction(e.to_string()))
    }
}
