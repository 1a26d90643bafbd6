mod manifest;

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use manifest::RunManifest;
use worldsmith::agents::{rollout, GreedyPolicy, OraclePolicy, Policy, RemotePolicy, RuleList, RulePolicy, Trajectory};
use worldsmith::builder::{generate_scene, Archetype, GenContext, GenerationSpec};
use worldsmith::coevolve::{read_run_dir, render_report, run_experiment, write_run_dir, AgentKind, Condition, RunConfig, RUN_FILES, RUN_EGO_SIZE};
use worldsmith::env::{Action, EnvConfig, NavEnv, SemanticMap, LONG_MAX_STEPS};
use worldsmith::metrics::{aggregate, DEFAULT_DELTA_CM, DEFAULT_ETA};
use worldsmith::nav::{
    apply_difficulty, build_grid_region, difficulty_level, read_episodes, sample_episode, write_episodes, Episode,
    OccupancyGrid, SampleConfig, TaskType, DEFAULT_CELL_SIZE,
};
use worldsmith::scene::{AssetCatalog, Category, SceneGraph};
use worldsmith::server::client::NdjsonClient;
use worldsmith::server::{serve, Handler, HandlerFactory, Session, Transport};
use worldsmith::skills::SkillIndex;
use worldsmith::verify::{check_bounds, check_collisions, check_vertical_support, compute_rule_metrics, CheckFilter, MetricRequest};
use worldsmith::{seed, TrajectoryRecord};

#[derive(Parser)]
#[command(name = "worldsmith", version, about = "Generate, verify and navigate procedural street scenes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a scene from a generation spec (or just an archetype).
    Generate(GenerateArgs),
    /// Run the rule verifiers on a scene file.
    Verify(VerifyArgs),
    /// Sample navigation episodes on a scene.
    Episodes(EpisodesArgs),
    /// Roll a policy out on sampled episodes.
    Rollout(RolloutArgs),
    /// Aggregate navigation metrics over a trajectory file.
    Evaluate(EvaluateArgs),
    /// Run one curriculum condition for the configured epochs.
    Coevolve(CoevolveArgs),
    /// Serve the scene tools over stdio or tcp.
    Serve(ServeArgs),
    /// Summarise one or more run directories.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON generation spec.
    spec: Option<PathBuf>,
    /// Used when no spec file is given.
    #[arg(long)]
    archetype: Option<String>,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Skill library directory; defaults to <out>/skills.
    #[arg(long)]
    skills: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Also write verify.json and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EpisodesArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of episodes.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Difficulty level 0-7: adds its obstacles and uses its length bounds.
    #[arg(long)]
    level: Option<usize>,
    /// Geodesic length bounds in cm; override the level's.
    #[arg(long)]
    min_len: Option<f64>,
    #[arg(long)]
    max_len: Option<f64>,
    /// pointnav or objectnav
    #[arg(long, default_value = "pointnav")]
    task: String,
    /// Goal category for objectnav.
    #[arg(long)]
    category: Option<String>,
    /// Side of the square navigation window around the origin, cm.
    #[arg(long, default_value_t = worldsmith::coevolve::DEFAULT_WINDOW_CM)]
    window: f64,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    episodes: PathBuf,
    /// Defaults to scene.json next to the episode file.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// oracle | greedy | rules:<path> | external:<host:port>
    #[arg(long, default_value = "greedy")]
    policy: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = LONG_MAX_STEPS)]
    max_steps: usize,
    #[arg(long, default_value_t = worldsmith::coevolve::DEFAULT_WINDOW_CM)]
    window: f64,
    #[arg(long, default_value_t = RUN_EGO_SIZE)]
    ego_size: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// trajectories.jsonl from `rollout`.
    trajectories: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Success radius, cm.
    #[arg(long, default_value_t = DEFAULT_DELTA_CM)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    eta: f64,
}

#[derive(Args)]
struct CoevolveArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    condition: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    episodes_per_epoch: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    heldout: Option<usize>,
    /// rules | oracle | turn-left
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// stdio or tcp:host:port
    #[arg(long = "serve", default_value = "stdio")]
    transport: String,
    /// Scene every connection starts from; empty ground otherwise.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Where save_scene and render_view write.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum Failure {
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Experiment(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Schema(_) => 2,
            Failure::Domain(_) => 3,
            Failure::Experiment(_) => 4,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

fn domain(e: impl std::fmt::Display) -> Failure {
    Failure::Domain(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))
}

fn load_scene(path: &Path) -> Result<SceneGraph, Failure> {
    SceneGraph::from_json(&read(path)?).map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))
}

fn window_grid(scene: &SceneGraph, catalog: &AssetCatalog, window: f64) -> Result<OccupancyGrid, Failure> {
    if !(window.is_finite() && window > 0.0) {
        return Err(Failure::Schema(format!("window must be positive, got {window}")));
    }
    let h = window / 2.0;
    build_grid_region(scene, catalog, DEFAULT_CELL_SIZE, [-h, -h], [h, h]).map_err(domain)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value prints"));
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let mut spec = match (&a.spec, &a.archetype) {
        (Some(p), _) => GenerationSpec::from_json(&read(p)?).map_err(|e| Failure::Schema(format!("{}: {e}", p.display())))?,
        (None, Some(tag)) => {
            let arch: Archetype = serde_json::from_value(Value::String(tag.clone()))
                .map_err(|_| Failure::Schema(format!("unknown archetype {tag:?}")))?;
            GenerationSpec::new(arch, 0)
        }
        (None, None) => return Err(Failure::Schema("give a spec file or --archetype".into())),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let skills_dir = a.skills.clone().unwrap_or_else(|| a.out.join("skills"));
    fs::create_dir_all(&skills_dir)?;
    let skills = SkillIndex::load(&skills_dir).map_err(domain)?;
    let mut ctx = GenContext::new(Arc::new(AssetCatalog::builtin()), skills, &a.out);
    let out = generate_scene(&spec, &mut ctx).map_err(domain)?;
    out.write_to(&a.out)?;
    let mut m = RunManifest::new("generate", serde_json::to_value(&spec).expect("spec serializes"), Some(spec.seed));
    if let Some(p) = &a.spec {
        m = m.input(p);
    }
    m.write(&a.out, &["scene.json", "trace.jsonl", "verdict.json"])?;
    print_json(&json!({
        "scene": a.out.join("scene.json"),
        "actors": out.scene.actors().count(),
        "status": out.verdict.status,
        "rounds": out.rounds,
        "promoted": out.promoted,
        "hash": out.scene.content_hash(),
    }));
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    let scene = load_scene(&a.scene)?;
    let cat = AssetCatalog::builtin();
    let filter = CheckFilter::default();
    let metrics = compute_rule_metrics(&scene, &cat, &MetricRequest::default()).map_err(domain)?;
    let collisions = check_collisions(&scene, &cat, &filter, 0.0).map_err(domain)?;
    let support = check_vertical_support(&scene, &cat, &filter, scene.ground_z, 1.0).map_err(domain)?;
    let bounds = check_bounds(&scene, &cat, scene.ground_half_extent).map_err(domain)?;
    let v = json!({
        "metrics": metrics,
        "collisions": collisions.pairs,
        "floating": support,
        "out_of_bounds": bounds.out_of_bounds,
        "hash": scene.content_hash(),
    });
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("verify.json"), serde_json::to_string_pretty(&v).expect("json") + "\n")?;
        RunManifest::new("verify", json!({ "scene": a.scene }), None)
            .input(&a.scene)
            .write(out, &["verify.json"])?;
    }
    print_json(&v);
    Ok(())
}

fn cmd_episodes(a: EpisodesArgs) -> Result<(), Failure> {
    let task = match a.task.to_ascii_lowercase().as_str() {
        "pointnav" => TaskType::PointNav,
        "objectnav" => TaskType::ObjectNav,
        other => return Err(Failure::Schema(format!("unknown task {other:?}; expected pointnav or objectnav"))),
    };
    let category = a
        .category
        .as_deref()
        .map(|c| c.parse::<Category>().map_err(|e| Failure::Schema(e.to_string())))
        .transpose()?;
    let cat = AssetCatalog::builtin();
    let mut scene = load_scene(&a.scene)?;
    let mut grid = window_grid(&scene, &cat, a.window)?;
    let mut cfg = SampleConfig::default();
    if let Some(l) = a.level {
        let lvl = difficulty_level(l).map_err(|e| Failure::Schema(e.to_string()))?;
        let aug = apply_difficulty(&scene, &cat, &grid, lvl, seed::derive_u64(a.seed, &format!("scene/level/{l}")))
            .map_err(domain)?;
        scene = aug.scene;
        grid = aug.grid;
        cfg = SampleConfig::for_level(lvl);
    }
    cfg.bounds = (a.min_len.unwrap_or(cfg.bounds.0), a.max_len.unwrap_or(cfg.bounds.1));
    if !(cfg.bounds.0 <= cfg.bounds.1) {
        return Err(Failure::Schema(format!("empty length bounds {:?}", cfg.bounds)));
    }
    cfg.task_type = task;
    cfg.category = category;
    cfg.scene_ref = "scene.json".into();

    let mut episodes: Vec<Episode> = Vec::with_capacity(a.n);
    let mut shortfall = Vec::new();
    for i in 0..a.n {
        match sample_episode(&grid, &scene, &cat, &cfg, seed::derive_u64(a.seed, &format!("episodes/{i}"))) {
            Ok(mut e) => {
                e.id = format!("ep{i:04}");
                episodes.push(e);
            }
            Err(e @ worldsmith::nav::NavError::MissingCategory(_)) => return Err(domain(e)),
            Err(e) => shortfall.push(json!({ "index": i, "error": e.to_string() })),
        }
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("scene.json"), scene.to_json_pretty())?;
    write_episodes(io::BufWriter::new(fs::File::create(a.out.join("episodes.jsonl"))?), &episodes)?;
    let config = json!({
        "scene": a.scene, "n": a.n, "level": a.level, "bounds": cfg.bounds, "task": task.to_string(),
        "category": category, "window": a.window,
    });
    let mut outputs = vec!["scene.json", "episodes.jsonl"];
    if !shortfall.is_empty() {
        let report = json!({ "requested": a.n, "produced": episodes.len(), "failures": shortfall });
        fs::write(a.out.join("shortfall.json"), serde_json::to_string_pretty(&report).expect("json") + "\n")?;
        outputs.push("shortfall.json");
    }
    RunManifest::new("episodes", config, Some(a.seed)).input(&a.scene).write(&a.out, &outputs)?;
    if !shortfall.is_empty() {
        return Err(Failure::Domain(format!(
            "sampled {} of {} episodes; see {}",
            episodes.len(),
            a.n,
            a.out.join("shortfall.json").display()
        )));
    }
    print_json(&json!({ "episodes": episodes.len(), "out": a.out.join("episodes.jsonl") }));
    Ok(())
}

fn make_policy(spec: &str, grid: &Arc<OccupancyGrid>) -> Result<Box<dyn Policy>, Failure> {
    match spec.split_once(':') {
        None if spec == "oracle" => Ok(Box::new(OraclePolicy::new(grid.clone()))),
        None if spec == "greedy" => Ok(Box::new(GreedyPolicy)),
        Some(("rules", path)) => {
            let rules: RuleList = serde_json::from_str(&read(Path::new(path))?)
                .map_err(|e| Failure::Schema(format!("{path}: {e}")))?;
            Ok(Box::new(RulePolicy::new(rules)))
        }
        Some(("external", addr)) => {
            let client = NdjsonClient::connect(addr)
                .map_err(|e| Failure::Domain(format!("external policy at {addr} unreachable: {e}")))?;
            Ok(Box::new(RemotePolicy::new(client)))
        }
        _ => Err(Failure::Schema(format!(
            "unknown policy {spec:?}; expected oracle, greedy, rules:<path> or external:<host:port>"
        ))),
    }
}

fn cmd_rollout(a: RolloutArgs) -> Result<(), Failure> {
    let episodes = read_episodes(BufReader::new(
        fs::File::open(&a.episodes).map_err(|e| Failure::Schema(format!("{}: {e}", a.episodes.display())))?,
    ))
    .map_err(|e| Failure::Schema(format!("{}: {e}", a.episodes.display())))?;
    let scene_path = a
        .scene
        .clone()
        .unwrap_or_else(|| a.episodes.parent().unwrap_or(Path::new(".")).join("scene.json"));
    let scene = load_scene(&scene_path)?;
    let cat = AssetCatalog::builtin();
    let grid = Arc::new(window_grid(&scene, &cat, a.window)?);
    let map = Arc::new(SemanticMap::new(&scene, &cat, grid.clone()).map_err(domain)?);
    let env_cfg = EnvConfig {
        max_steps: a.max_steps,
        ego_size: a.ego_size,
        ..EnvConfig::default()
    };
    let mut policy = make_policy(&a.policy, &grid)?;
    let mut env = NavEnv::new(map, env_cfg.clone());
    let mut trajs: Vec<Trajectory> = Vec::with_capacity(episodes.len());
    for (i, ep) in episodes.iter().enumerate() {
        trajs.push(rollout(&mut env, ep, policy.as_mut(), i + 1).map_err(domain)?);
    }
    fs::create_dir_all(&a.out)?;
    write_jsonl(&a.out.join("trajectories.jsonl"), &trajs)?;
    let records: Vec<TrajectoryRecord> = trajs.iter().map(|t| t.record.clone()).collect();
    let metrics = if records.is_empty() {
        Value::Null
    } else {
        serde_json::to_value(aggregate(&records, DEFAULT_ETA, env_cfg.success_threshold).map_err(domain)?).expect("json")
    };
    fs::write(a.out.join("metrics.json"), serde_json::to_string_pretty(&metrics).expect("json") + "\n")?;
    let config = json!({
        "episodes": a.episodes, "scene": scene_path, "policy": a.policy, "max_steps": a.max_steps,
        "window": a.window, "ego_size": a.ego_size,
    });
    RunManifest::new("rollout", config, None)
        .input(&a.episodes)
        .input(&scene_path)
        .write(&a.out, &["trajectories.jsonl", "metrics.json"])?;
    print_json(&metrics);
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let f = fs::File::open(&a.trajectories).map_err(|e| Failure::Schema(format!("{}: {e}", a.trajectories.display())))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(&line)
            .map_err(|e| Failure::Schema(format!("{} line {}: {e}", a.trajectories.display(), n + 1)))?;
        records.push(t.record);
    }
    let m = aggregate(&records, a.eta, a.delta).map_err(domain)?;
    let v = serde_json::to_value(&m).expect("json");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&v).expect("json") + "\n")?;
        RunManifest::new("evaluate", json!({ "trajectories": a.trajectories, "eta": a.eta, "delta": a.delta }), None)
            .input(&a.trajectories)
            .write(out, &["metrics.json"])?;
    }
    print_json(&v);
    Ok(())
}

fn parse_agent(s: &str) -> Result<AgentKind, Failure> {
    match s.to_ascii_lowercase().as_str() {
        "rules" => Ok(AgentKind::Rules),
        "oracle" => Ok(AgentKind::Oracle),
        "turn-left" | "turnleft" => Ok(AgentKind::Constant(Action::TurnLeft)),
        other => Err(Failure::Schema(format!("unknown agent {other:?}; expected rules, oracle or turn-left"))),
    }
}

fn cmd_coevolve(a: CoevolveArgs) -> Result<(), Failure> {
    let mut cfg: RunConfig = match &a.config {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Failure::Schema(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    if let Some(c) = &a.condition {
        cfg.condition = c.parse::<Condition>().map_err(Failure::Schema)?;
    }
    if let Some(agent) = &a.agent {
        cfg.agent = parse_agent(agent)?;
    }
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.episodes_per_epoch = a.episodes_per_epoch.unwrap_or(cfg.episodes_per_epoch);
    cfg.eval_every = a.eval_every.unwrap_or(cfg.eval_every);
    cfg.max_steps = a.max_steps.unwrap_or(cfg.max_steps);
    cfg.heldout_episodes = a.heldout.unwrap_or(cfg.heldout_episodes);
    cfg.validate().map_err(|e| Failure::Schema(e.to_string()))?;

    let work = a.out.join("pool");
    let run = run_experiment(&cfg, &work).map_err(|e| Failure::Experiment(e.to_string()))?;
    write_run_dir(&a.out, &run)?;
    let report = render_report(std::slice::from_ref(&run));
    fs::write(a.out.join("report.md"), &report)?;
    let mut outputs: Vec<&str> = RUN_FILES.to_vec();
    outputs.push("report.md");
    let mut m = RunManifest::new("coevolve", serde_json::to_value(&cfg).expect("config serializes"), Some(cfg.seed));
    if let Some(p) = &a.config {
        m = m.input(p);
    }
    m.write(&a.out, &outputs)?;
    print!("{report}");
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    let transport: Transport = a.transport.parse().map_err(|e: worldsmith::server::TransportError| Failure::Schema(e.to_string()))?;
    let scene = a.scene.as_deref().map(load_scene).transpose()?;
    let catalog = Arc::new(AssetCatalog::builtin());
    let out = a.out.clone();
    let factory: HandlerFactory = Arc::new(move |_| {
        let mut s = Session::new(catalog.clone(), out.clone());
        if let Some(sc) = &scene {
            s = s.with_scene(sc.clone());
        }
        Box::new(s) as Box<dyn Handler>
    });
    serve(&transport, factory, |addr| eprintln!("listening on {addr}")).map_err(domain)
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let runs = a
        .runs
        .iter()
        .map(|d| read_run_dir(d).map_err(|e| Failure::Schema(format!("{}: not a run directory: {e}", d.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    let report = render_report(&runs);
    if let Some(out) = &a.out {
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(out, &report)?;
    }
    print!("{report}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Episodes(a) => cmd_episodes(a),
        Cmd::Rollout(a) => cmd_rollout(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Coevolve(a) => cmd_coevolve(a),
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
