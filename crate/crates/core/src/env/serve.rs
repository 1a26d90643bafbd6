use base64::Engine;
use serde_json::{json, Value};

use super::{Action, EnvError, NavEnv, Observation, StepResult};
use crate::nav::Episode;
use crate::raster::Raster;
use crate::server::{codes, Handler, ToolError, ToolRequest, ToolResponse};

/// Exposes an environment over the tool-server protocol as `reset` and `step`,
/// so policies can run out of process.
pub struct EnvHandler {
    env: NavEnv,
    last_id: Option<u64>,
}

impl EnvHandler {
    pub fn new(env: NavEnv) -> Self {
        Self { env, last_id: None }
    }

    fn run(&mut self, req: &ToolRequest) -> Result<Value, ToolError> {
        let allow = |keys: &[&str]| -> Result<(), ToolError> {
            match req.args.keys().find(|k| !keys.contains(&k.as_str())) {
                Some(k) => Err(ToolError::bad_args(format!("{}: unexpected argument `{k}`", req.tool))),
                None => Ok(()),
            }
        };
        match req.tool.as_str() {
            "reset" => {
                allow(&["episode", "seed"])?;
                let ep: Episode = serde_json::from_value(req.args.get("episode").cloned().unwrap_or(Value::Null))
                    .map_err(|e| ToolError::bad_args(format!("reset: `episode` {e}")))?;
                let seed = match req.args.get("seed") {
                    None => ep.seed,
                    Some(v) => v.as_u64().ok_or_else(|| ToolError::bad_args("reset: `seed` must be an unsigned integer"))?,
                };
                let obs = self.env.reset(&ep, seed).map_err(env_error)?;
                Ok(json!({ "observation": observation_json(&obs) }))
            }
            "step" => {
                allow(&["action"])?;
                let action: Action = serde_json::from_value(req.args.get("action").cloned().unwrap_or(Value::Null))
                    .map_err(|_| ToolError::bad_args("step: `action` must be one of move_forward, turn_left, turn_right, stop"))?;
                let r = self.env.step(action).map_err(env_error)?;
                Ok(step_json(&r))
            }
            other => Err(ToolError::new(codes::UNKNOWN_TOOL, format!("no tool named {other:?}"))),
        }
    }
}

fn env_error(e: EnvError) -> ToolError {
    let code = match e {
        EnvError::NotReset | EnvError::Finished => codes::NOT_INITIALIZED,
        _ => codes::DOMAIN,
    };
    ToolError::new(code, e.to_string())
}

pub fn observation_json(o: &Observation) -> Value {
    json!({
        "bearing": o.bearing,
        "distance": o.distance,
        "step_count": o.step_count,
        "ego_raster": {
            "width": o.ego_raster.width,
            "height": o.ego_raster.height,
            "base64": base64::engine::general_purpose::STANDARD.encode(&o.ego_raster.pixels),
        }
    })
}

fn step_json(r: &StepResult) -> Value {
    json!({
        "observation": observation_json(&r.observation),
        "reward": r.reward,
        "terminated": r.terminated,
        "truncated": r.truncated,
        "info": r.info,
    })
}

impl Handler for EnvHandler {
    fn handle(&mut self, req: &ToolRequest) -> ToolResponse {
        if self.last_id.is_some_and(|l| req.id <= l) {
            return ToolResponse::failure(
                Some(req.id),
                ToolError::new(codes::NON_MONOTONIC_ID, "request ids must increase"),
            );
        }
        self.last_id = Some(req.id);
        ToolResponse::from_result(req.id, self.run(req))
    }
}

/// Inverse of [`observation_json`].
pub fn observation_from_json(v: &Value) -> Result<Observation, ToolError> {
    let num = |k: &str| {
        v.get(k)
            .and_then(Value::as_f64)
            .ok_or_else(|| ToolError::bad_args(format!("observation: `{k}` must be a number")))
    };
    let r = v
        .get("ego_raster")
        .ok_or_else(|| ToolError::bad_args("observation: missing `ego_raster`"))?;
    let dim = |k: &str| {
        r.get(k)
            .and_then(Value::as_u64)
            .map(|n| n as usize)
            .ok_or_else(|| ToolError::bad_args(format!("observation: raster `{k}` must be an unsigned integer")))
    };
    let (width, height) = (dim("width")?, dim("height")?);
    let pixels = r
        .get("base64")
        .and_then(Value::as_str)
        .and_then(|s| base64::engine::general_purpose::STANDARD.decode(s).ok())
        .ok_or_else(|| ToolError::bad_args("observation: raster `base64` is not valid base64"))?;
    if pixels.len() != width * height {
        return Err(ToolError::bad_args("observation: raster size does not match its dimensions"));
    }
    Ok(Observation {
        ego_raster: Raster { width, height, pixels },
        bearing: num("bearing")?,
        distance: num("distance")?,
        step_count: num("step_count")? as usize,
    })
}
