use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolRequest {
    pub id: u64,
    pub tool: String,
    #[serde(default)]
    pub args: Map<String, Value>,
}

impl ToolRequest {
    pub fn new(id: u64, tool: impl Into<String>, args: Value) -> Self {
        let args = match args {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self {
            id,
            tool: tool.into(),
            args,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolError {
    pub code: String,
    pub message: String,
}

impl ToolError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn bad_args(message: impl Into<String>) -> Self {
        Self::new(codes::BAD_ARGS, message)
    }
}

/// Exactly one of `payload` / `error` is present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub payload: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<ToolError>,
}

impl ToolResponse {
    pub fn success(id: u64, payload: Value) -> Self {
        Self {
            id: Some(id),
            ok: true,
            payload: Some(payload),
            error: None,
        }
    }

    pub fn failure(id: Option<u64>, error: ToolError) -> Self {
        Self {
            id,
            ok: false,
            payload: None,
            error: Some(error),
        }
    }

    pub fn from_result(id: u64, r: Result<Value, ToolError>) -> Self {
        match r {
            Ok(v) => Self::success(id, v),
            Err(e) => Self::failure(Some(id), e),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

pub mod codes {
    pub const MALFORMED_FRAME: &str = "malformed_frame";
    pub const NON_MONOTONIC_ID: &str = "non_monotonic_id";
    pub const UNKNOWN_TOOL: &str = "unknown_tool";
    pub const BAD_ARGS: &str = "bad_args";
    pub const DUPLICATE_NAME: &str = "duplicate_name";
    pub const UNKNOWN_ACTOR: &str = "unknown_actor";
    pub const UNKNOWN_ASSET: &str = "unknown_asset";
    pub const UNKNOWN_CATEGORY: &str = "unknown_category";
    pub const INVALID_TRANSFORM: &str = "invalid_transform";
    pub const NOT_INITIALIZED: &str = "not_initialized";
    pub const ALREADY_INITIALIZED: &str = "already_initialized";
    pub const BAD_PATTERN: &str = "bad_pattern";
    pub const IO: &str = "io_error";
    pub const JUDGE_UNAVAILABLE: &str = "judge_unavailable";
    pub const BATCH_FAILED: &str = "batch_failed";
    pub const DOMAIN: &str = "domain_error";
}
