use std::collections::BTreeSet;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::protocol::{codes, ToolError, ToolRequest, ToolResponse};
use super::Handler;
use crate::raster;
use crate::scene::{ActorRecord, AssetCatalog, Category, SceneError, SceneGraph, TransformPatch};
use crate::verify::{
    self, CheckFilter, JudgeError, JudgeRegistry, JudgeRequest, MetricRequest, RuleJudge, Scope,
    SceneSummary, VerifyError,
};
use crate::{Rotation, Transform, Vec3};

/// The fourteen tool names, in reference order.
pub const TOOLS: [&str; 14] = [
    "spawn_blueprint_actor",
    "spawn_actor",
    "delete_actor",
    "delete_all_spawned",
    "get_actors_in_level",
    "find_actors_by_name",
    "set_actor_transform",
    "take_screenshot",
    "setup_environment",
    "list_assets",
    "verify_scene",
    "check_collisions",
    "check_vertical_support",
    "execute_python_script",
];

/// Alias of `execute_python_script` taking the call list under `requests`.
pub const BATCH_ALIAS: &str = "batch_commands";

pub const DEFAULT_GROUND_SIZE: f64 = 19000.0;
pub const DEFAULT_TIME_OF_DAY: &str = "noon";

fn is_mutating(tool: &str) -> bool {
    matches!(
        tool,
        "spawn_blueprint_actor"
            | "spawn_actor"
            | "delete_actor"
            | "delete_all_spawned"
            | "set_actor_transform"
            | "setup_environment"
            | "execute_python_script"
            | BATCH_ALIAS
    )
}

/// One successful mutating call, enough to rebuild the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedCall {
    pub tool: String,
    pub args: Map<String, Value>,
}

impl From<SceneError> for ToolError {
    fn from(e: SceneError) -> Self {
        let code = match &e {
            SceneError::DuplicateName(_) => codes::DUPLICATE_NAME,
            SceneError::UnknownActor(_) => codes::UNKNOWN_ACTOR,
            SceneError::UnknownAsset(_) | SceneError::InvalidAsset(_) => codes::UNKNOWN_ASSET,
            SceneError::UnknownCategory(_) => codes::UNKNOWN_CATEGORY,
            SceneError::NonFinite | SceneError::InvalidScale => codes::INVALID_TRANSFORM,
            SceneError::InvalidGroundSize(_) => codes::BAD_ARGS,
            SceneError::AlreadyInitialized => codes::ALREADY_INITIALIZED,
            SceneError::NotInitialized => codes::NOT_INITIALIZED,
            SceneError::BadPattern { .. } => codes::BAD_PATTERN,
            SceneError::Parse(_) => codes::DOMAIN,
        };
        ToolError::new(code, e.to_string())
    }
}

impl From<VerifyError> for ToolError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Scene(s) => s.into(),
            other => ToolError::new(codes::DOMAIN, other.to_string()),
        }
    }
}

impl From<JudgeError> for ToolError {
    fn from(e: JudgeError) -> Self {
        ToolError::new(codes::JUDGE_UNAVAILABLE, e.to_string())
    }
}

/// Argument accessor that rejects names the tool does not declare.
struct Args<'a> {
    tool: &'a str,
    map: &'a Map<String, Value>,
}

impl<'a> Args<'a> {
    fn new(tool: &'a str, map: &'a Map<String, Value>, allowed: &[&str]) -> Result<Self, ToolError> {
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ToolError::bad_args(format!("{tool}: unexpected argument `{k}`")));
        }
        Ok(Self { tool, map })
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn missing(&self, key: &str) -> ToolError {
        ToolError::bad_args(format!("{}: missing required argument `{key}`", self.tool))
    }

    fn wrong(&self, key: &str, what: &str) -> ToolError {
        ToolError::bad_args(format!("{}: argument `{key}` must be {what}", self.tool))
    }

    fn str_opt(&self, key: &str) -> Result<Option<&'a str>, ToolError> {
        self.get(key)
            .map(|v| v.as_str().ok_or_else(|| self.wrong(key, "a string")))
            .transpose()
    }

    fn str_req(&self, key: &str) -> Result<&'a str, ToolError> {
        self.str_opt(key)?.ok_or_else(|| self.missing(key))
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>, ToolError> {
        self.get(key)
            .map(|v| v.as_f64().ok_or_else(|| self.wrong(key, "a number")))
            .transpose()
    }

    fn bool_opt(&self, key: &str) -> Result<Option<bool>, ToolError> {
        self.get(key)
            .map(|v| v.as_bool().ok_or_else(|| self.wrong(key, "a boolean")))
            .transpose()
    }

    fn triple(&self, key: &str, names: [&str; 3]) -> Result<Option<[f64; 3]>, ToolError> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let what = format!("[{0}, {1}, {2}] or {{{0}, {1}, {2}}}", names[0], names[1], names[2]);
        let nums: Option<Vec<f64>> = match v {
            Value::Array(a) if a.len() == 3 => a.iter().map(Value::as_f64).collect(),
            Value::Object(o) if o.len() == 3 => names.iter().map(|n| o.get(*n).and_then(Value::as_f64)).collect(),
            _ => None,
        };
        let nums = nums.ok_or_else(|| self.wrong(key, &what))?;
        Ok(Some([nums[0], nums[1], nums[2]]))
    }

    fn vec3(&self, key: &str) -> Result<Option<Vec3>, ToolError> {
        Ok(self.triple(key, ["x", "y", "z"])?.map(Vec3::from_array))
    }

    fn rotation(&self, key: &str) -> Result<Option<Rotation>, ToolError> {
        Ok(self
            .triple(key, ["yaw", "pitch", "roll"])?
            .map(|[y, p, r]| Rotation::new(y, p, r)))
    }

    fn names(&self, key: &str) -> Result<Option<BTreeSet<String>>, ToolError> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let arr = v.as_array().ok_or_else(|| self.wrong(key, "an array of strings"))?;
        arr.iter()
            .map(|s| s.as_str().map(str::to_string).ok_or_else(|| self.wrong(key, "an array of strings")))
            .collect::<Result<_, _>>()
            .map(Some)
    }

    fn scope(&self) -> Result<Scope, ToolError> {
        match self.str_opt("scope")? {
            None => Ok(Scope::All),
            Some(s) => Scope::parse(s).ok_or_else(|| self.wrong("scope", "\"all\" or \"spawned\"")),
        }
    }
}

fn actor_json(a: &ActorRecord) -> Value {
    json!({
        "name": a.name,
        "asset_id": a.asset_id,
        "category": a.category,
        "location": a.transform.location.to_array(),
        "rotation": a.transform.rotation.to_array(),
        "scale": a.transform.scale.to_array(),
        "spawned_in_session": a.spawned_in_session,
    })
}

/// Relative path under the output directory, no `..` or absolute components.
fn safe_relative(name: &str) -> Result<PathBuf, ToolError> {
    let p = Path::new(name);
    if name.is_empty() || p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(ToolError::bad_args(format!(
            "take_screenshot: filename must be a relative path without `..`, got {name:?}"
        )));
    }
    Ok(p.with_extension("pgm"))
}

fn rel_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// One client's view of a scene: the scene itself, the request counter and the log
/// of successful mutating calls. Session-spawned actors are flagged on the records,
/// so the spawned ledger is always a subset of the scene.
pub struct Session {
    scene: SceneGraph,
    catalog: Arc<AssetCatalog>,
    judges: Arc<JudgeRegistry>,
    judge_name: String,
    output_dir: PathBuf,
    raster_size: usize,
    last_id: Option<u64>,
    events: Vec<LoggedCall>,
}

impl Session {
    pub fn new(catalog: Arc<AssetCatalog>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            scene: SceneGraph::default(),
            catalog,
            judges: Arc::new(JudgeRegistry::with_builtin()),
            judge_name: RuleJudge::NAME.to_string(),
            output_dir: output_dir.into(),
            raster_size: raster::DEFAULT_SIZE,
            last_id: None,
            events: Vec::new(),
        }
    }

    pub fn with_judges(mut self, judges: Arc<JudgeRegistry>, judge_name: impl Into<String>) -> Self {
        self.judges = judges;
        self.judge_name = judge_name.into();
        self
    }

    pub fn with_raster_size(mut self, size: usize) -> Self {
        self.raster_size = size;
        self
    }

    /// Starts from an existing scene (e.g. a loaded file). Its actors are not part of
    /// the spawned ledger and are not covered by the event log.
    pub fn with_scene(mut self, mut scene: SceneGraph) -> Self {
        scene.clear_spawned_flags();
        self.scene = scene;
        self
    }

    pub fn scene(&self) -> &SceneGraph {
        &self.scene
    }

    pub fn catalog(&self) -> &AssetCatalog {
        &self.catalog
    }

    pub fn events(&self) -> &[LoggedCall] {
        &self.events
    }

    pub fn spawned_ledger(&self) -> Vec<&str> {
        self.scene
            .actors()
            .filter(|a| a.spawned_in_session)
            .map(|a| a.name.as_str())
            .collect()
    }

    pub fn dispatch(&mut self, req: &ToolRequest) -> ToolResponse {
        if let Some(last) = self.last_id {
            if req.id <= last {
                return ToolResponse::failure(
                    Some(req.id),
                    ToolError::new(
                        codes::NON_MONOTONIC_ID,
                        format!("request id {} does not exceed previous id {last}", req.id),
                    ),
                );
            }
        }
        self.last_id = Some(req.id);
        let snapshot = self.scene.clone();
        let result = self.run(req.id, &req.tool, &req.args);
        match &result {
            Ok(_) if is_mutating(&req.tool) => self.events.push(LoggedCall {
                tool: req.tool.clone(),
                args: req.args.clone(),
            }),
            Ok(_) => {}
            Err(_) => self.scene = snapshot,
        }
        ToolResponse::from_result(req.id, result)
    }

    /// Convenience for in-process drivers: dispatches with the next id.
    pub fn call(&mut self, tool: &str, args: Value) -> ToolResponse {
        let id = self.last_id.map_or(1, |i| i + 1);
        self.dispatch(&ToolRequest::new(id, tool, args))
    }

    fn run(&mut self, id: u64, tool: &str, args: &Map<String, Value>) -> Result<Value, ToolError> {
        match tool {
            "spawn_blueprint_actor" => {
                let a = Args::new(tool, args, &["actor_name", "blueprint_id", "location", "rotation", "scale"])?;
                self.spawn(&a, "actor_name", "blueprint_id")
            }
            "spawn_actor" => {
                let a = Args::new(tool, args, &["name", "static_mesh", "location", "rotation", "scale"])?;
                self.spawn(&a, "name", "static_mesh")
            }
            "delete_actor" => {
                let a = Args::new(tool, args, &["name"])?;
                let rec = self.scene.delete_actor(a.str_req("name")?)?;
                Ok(json!({ "deleted": rec.name }))
            }
            "delete_all_spawned" => {
                Args::new(tool, args, &[])?;
                Ok(json!({ "deleted": self.scene.delete_all_spawned() }))
            }
            "get_actors_in_level" => {
                Args::new(tool, args, &[])?;
                let actors: Vec<Value> = self.scene.actors().map(actor_json).collect();
                Ok(json!({ "count": actors.len(), "actors": actors }))
            }
            "find_actors_by_name" => {
                let a = Args::new(tool, args, &["pattern"])?;
                let pattern = a.str_req("pattern")?;
                let actors: Vec<Value> = self.scene.find_actors_by_name(pattern)?.into_iter().map(actor_json).collect();
                Ok(json!({ "pattern": pattern, "count": actors.len(), "actors": actors }))
            }
            "set_actor_transform" => {
                let a = Args::new(tool, args, &["name", "location", "rotation", "scale"])?;
                let patch = TransformPatch {
                    location: a.vec3("location")?,
                    rotation: a.rotation("rotation")?,
                    scale: a.vec3("scale")?,
                };
                let rec = self.scene.set_actor_transform(a.str_req("name")?, patch)?;
                Ok(json!({ "actor": actor_json(rec) }))
            }
            "take_screenshot" => {
                let a = Args::new(tool, args, &["filename"])?;
                let default = format!("screenshot_{id:04}");
                let rel = safe_relative(a.str_opt("filename")?.unwrap_or(&default))?;
                self.screenshot_tour(&rel)
            }
            "setup_environment" => {
                let a = Args::new(tool, args, &["ground_size", "time_of_day", "reinitialize"])?;
                let size = a.f64_opt("ground_size")?.unwrap_or(DEFAULT_GROUND_SIZE);
                let tod = a.str_opt("time_of_day")?.unwrap_or(DEFAULT_TIME_OF_DAY);
                let reinit = a.bool_opt("reinitialize")?.unwrap_or(false);
                self.scene.setup_environment(size, tod, reinit)?;
                Ok(json!({
                    "ground_size": size,
                    "ground_half_extent": self.scene.ground_half_extent,
                    "env_settings": self.scene.env_settings,
                }))
            }
            "list_assets" => {
                let a = Args::new(tool, args, &["category"])?;
                let cat = a.str_opt("category")?.map(str::parse::<Category>).transpose()?;
                let assets = self.catalog.list(cat);
                Ok(json!({ "category": cat, "count": assets.len(), "assets": assets }))
            }
            "verify_scene" => {
                let a = Args::new(tool, args, &["original_request", "focus_areas"])?;
                let request = a.str_req("original_request")?;
                let focus = a.names("focus_areas")?.unwrap_or_default();
                self.verify(id, request, focus)
            }
            "check_collisions" => {
                let a = Args::new(tool, args, &["names", "scope", "min_area_cm2"])?;
                let filter = CheckFilter {
                    names: a.names("names")?,
                    scope: a.scope()?,
                };
                let min_area = a.f64_opt("min_area_cm2")?.unwrap_or(0.0);
                let r = verify::check_collisions(&self.scene, &self.catalog, &filter, min_area)?;
                Ok(serde_json::to_value(r).expect("report serializes"))
            }
            "check_vertical_support" => {
                let a = Args::new(tool, args, &["names", "scope", "ground_z", "tolerance_cm"])?;
                let filter = CheckFilter {
                    names: a.names("names")?,
                    scope: a.scope()?,
                };
                let ground_z = a.f64_opt("ground_z")?.unwrap_or(self.scene.ground_z);
                let tol = a.f64_opt("tolerance_cm")?.unwrap_or(verify::DEFAULT_SUPPORT_TOLERANCE);
                let r = verify::check_vertical_support(&self.scene, &self.catalog, &filter, ground_z, tol)?;
                Ok(serde_json::to_value(r).expect("report serializes"))
            }
            "execute_python_script" => {
                let a = Args::new(tool, args, &["script", "timeout"])?;
                a.f64_opt("timeout")?;
                let script = a.get("script").ok_or_else(|| a.missing("script"))?;
                let steps = match script {
                    Value::String(s) => serde_json::from_str::<Value>(s)
                        .map_err(|e| a.wrong("script", &format!("a JSON array of tool calls ({e})")))?,
                    other => other.clone(),
                };
                self.batch(id, &steps)
            }
            BATCH_ALIAS => {
                let a = Args::new(tool, args, &["requests"])?;
                let steps = a.get("requests").ok_or_else(|| a.missing("requests"))?;
                self.batch(id, steps)
            }
            other => Err(ToolError::new(
                codes::UNKNOWN_TOOL,
                format!("no tool named {other:?}"),
            )),
        }
    }

    fn spawn(&mut self, a: &Args<'_>, name_key: &str, asset_key: &str) -> Result<Value, ToolError> {
        let name = a.str_req(name_key)?;
        let reference = a.str_req(asset_key)?;
        let location = a.vec3("location")?.ok_or_else(|| a.missing("location"))?;
        let asset_id = self.catalog.resolve(reference)?.asset_id.clone();
        let transform = Transform {
            location,
            rotation: a.rotation("rotation")?.unwrap_or_default(),
            scale: a.vec3("scale")?.unwrap_or(Vec3::splat(1.0)),
        };
        let rec = self.scene.spawn_actor(&self.catalog, name, &asset_id, transform)?;
        Ok(json!({ "actor": actor_json(rec) }))
    }

    fn screenshot_tour(&self, rel: &Path) -> Result<Value, ToolError> {
        if !self.scene.is_initialized() {
            return Err(SceneError::NotInitialized.into());
        }
        let views = raster::render_tour(&self.scene, &self.catalog, self.raster_size)?;
        let stem = rel.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut files = Vec::with_capacity(views.len());
        for (k, img) in views.iter().enumerate() {
            let p = if k == 0 {
                rel.to_path_buf()
            } else {
                rel.with_file_name(format!("{stem}_view{k}.pgm"))
            };
            img.write_pgm(&self.output_dir.join(&p))
                .map_err(|e| ToolError::new(codes::IO, format!("{}: {e}", p.display())))?;
            files.push(rel_string(&p));
        }
        Ok(json!({
            "path": files[0],
            "tour": files,
            "width": self.raster_size,
            "height": self.raster_size,
        }))
    }

    fn summary(&self) -> Result<SceneSummary, ToolError> {
        let mut per_category = std::collections::BTreeMap::new();
        for a in self.scene.actors() {
            *per_category.entry(a.category).or_insert(0) += 1;
        }
        let col = verify::check_collisions(&self.scene, &self.catalog, &CheckFilter::default(), 0.0)?;
        let sup = verify::check_vertical_support(
            &self.scene,
            &self.catalog,
            &CheckFilter::default(),
            self.scene.ground_z,
            verify::DEFAULT_SUPPORT_TOLERANCE,
        )?;
        Ok(SceneSummary {
            actor_count: self.scene.actor_count(),
            per_category,
            collision_pairs: col.pairs.len(),
            floating: sup.floating.len(),
            metrics: Default::default(),
        })
    }

    fn verify(&mut self, id: u64, request: &str, focus: BTreeSet<String>) -> Result<Value, ToolError> {
        let judge = self.judges.get(&self.judge_name)?;
        let counts = verify::requested_counts_from_text(request);
        let metrics = verify::compute_rule_metrics(
            &self.scene,
            &self.catalog,
            &MetricRequest {
                counts,
                ..Default::default()
            },
        )?;
        let mut summary = self.summary()?;
        summary.metrics = metrics.clone();
        let shots = self.screenshot_tour(Path::new(&format!("verify_{id:04}.pgm")))?;
        let screenshots = shots["tour"]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_str()).map(PathBuf::from).collect())
            .unwrap_or_default();
        let verdict = judge.judge(&JudgeRequest {
            request_text: request.to_string(),
            summary,
            screenshots,
        })?;
        Ok(json!({
            "judge": judge.name(),
            "status": verdict.status,
            "issues": verdict.issues,
            "scores": verdict.scores,
            "metrics": metrics,
            "focus_areas": focus,
            "screenshots": shots["tour"],
        }))
    }

    fn batch(&mut self, id: u64, steps: &Value) -> Result<Value, ToolError> {
        let steps = steps
            .as_array()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| ToolError::bad_args("batch must be a nonempty array of {tool, args} objects"))?;
        let mut results = Vec::with_capacity(steps.len());
        for (i, step) in steps.iter().enumerate() {
            let fail = |e: ToolError| {
                ToolError::new(codes::BATCH_FAILED, format!("step {i} failed [{}]: {}", e.code, e.message))
            };
            let obj = step
                .as_object()
                .ok_or_else(|| fail(ToolError::bad_args("step is not an object")))?;
            if let Some(k) = obj.keys().find(|k| *k != "tool" && *k != "args") {
                return Err(fail(ToolError::bad_args(format!("unexpected step field `{k}`"))));
            }
            let tool = obj
                .get("tool")
                .and_then(Value::as_str)
                .ok_or_else(|| fail(ToolError::bad_args("step needs a string `tool`")))?;
            if tool == "execute_python_script" || tool == BATCH_ALIAS {
                return Err(fail(ToolError::bad_args("batches do not nest")));
            }
            let empty = Map::new();
            let args = match obj.get("args") {
                None | Some(Value::Null) => &empty,
                Some(Value::Object(m)) => m,
                Some(_) => return Err(fail(ToolError::bad_args("`args` must be an object"))),
            };
            results.push(self.run(id, tool, args).map_err(fail)?);
        }
        Ok(json!({ "executed": results.len(), "results": results }))
    }
}

impl Handler for Session {
    fn handle(&mut self, req: &ToolRequest) -> ToolResponse {
        self.dispatch(req)
    }
}

/// Rebuilds a scene by dispatching logged calls into a fresh session.
pub fn replay_events(
    catalog: Arc<AssetCatalog>,
    output_dir: impl Into<PathBuf>,
    events: &[LoggedCall],
) -> Result<SceneGraph, ToolError> {
    let mut s = Session::new(catalog, output_dir);
    for (i, e) in events.iter().enumerate() {
        let r = s.dispatch(&ToolRequest {
            id: i as u64 + 1,
            tool: e.tool.clone(),
            args: e.args.clone(),
        });
        if let Some(err) = r.error {
            return Err(err);
        }
    }
    Ok(s.scene)
}
