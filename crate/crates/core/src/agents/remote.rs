use serde_json::{json, Value};

use super::{History, Policy};
use crate::env::{observation_from_json, observation_json, Action, Observation};
use crate::nav::Episode;
use crate::server::client::{ClientError, NdjsonClient};
use crate::server::{codes, Handler, ToolError, ToolRequest, ToolResponse};

/// Anything that can deliver one tool call and return its response.
pub trait ToolCaller: Send {
    fn call(&mut self, tool: &str, args: Value) -> Result<ToolResponse, ClientError>;
}

impl ToolCaller for NdjsonClient {
    fn call(&mut self, tool: &str, args: Value) -> Result<ToolResponse, ClientError> {
        NdjsonClient::call(self, tool, args)
    }
}

/// In-process transport: hands frames straight to a handler.
pub struct Direct<H: Handler> {
    pub handler: H,
    next_id: u64,
}

impl<H: Handler> Direct<H> {
    pub fn new(handler: H) -> Self {
        Self { handler, next_id: 1 }
    }
}

impl<H: Handler> ToolCaller for Direct<H> {
    fn call(&mut self, tool: &str, args: Value) -> Result<ToolResponse, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        Ok(self.handler.handle(&ToolRequest::new(id, tool, args)))
    }
}

/// Policy living on the other side of the tool protocol. Sends `begin` once per
/// episode and `act` per step; any transport or protocol failure is answered
/// with Stop and kept in `last_error`.
pub struct RemotePolicy<C: ToolCaller> {
    caller: C,
    pub last_error: Option<String>,
}

impl<C: ToolCaller> RemotePolicy<C> {
    pub fn new(caller: C) -> Self {
        Self { caller, last_error: None }
    }

    fn request(&mut self, tool: &str, args: Value) -> Option<Value> {
        match self.caller.call(tool, args) {
            Ok(r) if r.ok => r.payload,
            Ok(r) => {
                self.last_error = Some(r.error.map_or_else(|| "unknown error".into(), |e| e.message));
                None
            }
            Err(e) => {
                self.last_error = Some(e.to_string());
                None
            }
        }
    }
}

impl<C: ToolCaller> Policy for RemotePolicy<C> {
    fn name(&self) -> &str {
        "remote"
    }

    fn begin_episode(&mut self, episode: &Episode, episode_index: usize) {
        let ep = serde_json::to_value(episode).expect("episode serializes");
        self.request("begin", json!({ "episode": ep, "episode_index": episode_index }));
    }

    fn act(&mut self, obs: &Observation, history: &History) -> Action {
        let args = json!({ "observation": observation_json(obs), "history": history });
        self.request("act", args)
            .and_then(|p| p.get("action").cloned())
            .and_then(|a| serde_json::from_value(a).ok())
            .unwrap_or(Action::Stop)
    }
}

/// Serves a local policy as tools `begin` and `act`.
pub struct PolicyHandler<P: Policy> {
    pub policy: P,
}

impl<P: Policy> PolicyHandler<P> {
    pub fn new(policy: P) -> Self {
        Self { policy }
    }

    fn run(&mut self, req: &ToolRequest) -> Result<Value, ToolError> {
        match req.tool.as_str() {
            "begin" => {
                let ep: Episode = serde_json::from_value(req.args.get("episode").cloned().unwrap_or(Value::Null))
                    .map_err(|e| ToolError::bad_args(format!("begin: `episode` {e}")))?;
                let idx = req.args.get("episode_index").and_then(Value::as_u64).unwrap_or(0) as usize;
                self.policy.begin_episode(&ep, idx);
                Ok(json!({}))
            }
            "act" => {
                let obs = observation_from_json(req.args.get("observation").unwrap_or(&Value::Null))?;
                let history: History = match req.args.get("history") {
                    None | Some(Value::Null) => History::default(),
                    Some(h) => serde_json::from_value(h.clone())
                        .map_err(|e| ToolError::bad_args(format!("act: `history` {e}")))?,
                };
                let action = self.policy.act(&obs, &history);
                Ok(json!({ "action": action, "rule": self.policy.last_fired() }))
            }
            other => Err(ToolError::new(codes::UNKNOWN_TOOL, format!("no tool named {other:?}"))),
        }
    }
}

impl<P: Policy> Handler for PolicyHandler<P> {
    fn handle(&mut self, req: &ToolRequest) -> ToolResponse {
        ToolResponse::from_result(req.id, self.run(req))
    }
}
