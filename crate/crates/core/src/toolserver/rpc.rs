//! JSON-RPC 2.0 framing.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;
/// Tool-level failure; `data.name` carries the tool's error name.
pub const TOOL_ERROR: i64 = -32000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcRequest {
    pub jsonrpc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    pub method: String,
    #[serde(default)]
    pub params: Value,
}

impl RpcRequest {
    pub fn new(id: u64, method: &str, params: Value) -> Self {
        Self { jsonrpc: "2.0".into(), id: Some(Value::from(id)), method: method.into(), params }
    }

    pub fn tool_call(id: u64, name: &str, arguments: Value) -> Self {
        Self::new(id, "tools/call", serde_json::json!({"name": name, "arguments": arguments}))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

impl RpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), data: None }
    }

    /// Tool error name, for [`TOOL_ERROR`] responses.
    pub fn tool_error_name(&self) -> Option<&str> {
        self.data.as_ref()?.get("name")?.as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcResponse {
    pub jsonrpc: String,
    pub id: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcError>,
}

impl RpcResponse {
    pub fn ok(id: Value, result: Value) -> Self {
        Self { jsonrpc: "2.0".into(), id, result: Some(result), error: None }
    }

    pub fn err(id: Value, error: RpcError) -> Self {
        Self { jsonrpc: "2.0".into(), id, result: None, error: Some(error) }
    }
}

/// Parse one wire line into a request, or the error response to send back.
pub(crate) fn parse_request(line: &str) -> Result<RpcRequest, RpcResponse> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| RpcResponse::err(Value::Null, RpcError::new(PARSE_ERROR, format!("parse error: {e}"))))?;
    let id = value.get("id").cloned().unwrap_or(Value::Null);
    let req: RpcRequest = serde_json::from_value(value)
        .map_err(|e| RpcResponse::err(id.clone(), RpcError::new(INVALID_REQUEST, format!("invalid request: {e}"))))?;
    if req.jsonrpc != "2.0" {
        return Err(RpcResponse::err(id, RpcError::new(INVALID_REQUEST, "jsonrpc must be \"2.0\"")));
    }
    Ok(req)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_errors() {
        assert_eq!(parse_request("{").unwrap_err().error.unwrap().code, PARSE_ERROR);
        let e = parse_request(r#"{"jsonrpc":"1.0","id":3,"method":"x"}"#).unwrap_err();
        assert_eq!((e.id, e.error.unwrap().code), (Value::from(3), INVALID_REQUEST));
        let r = parse_request(r#"{"jsonrpc":"2.0","id":"a","method":"tools/list"}"#).unwrap();
        assert_eq!((r.method.as_str(), r.params), ("tools/list", Value::Null));
    }
}
