//! Closed-loop curriculum: epochs of generated episodes, rollouts, rule
//! updates and mastery-gated difficulty.

mod pool;
mod report;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_rational::Ratio;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pool::{LevelWorld, PoolScene, ScenePool, DEFAULT_WINDOW_CM};
pub use report::{curves_csv, curves_svg, read_run_dir, render_report, write_run_dir, RUN_FILES};

use crate::agents::{
    extract_failures, memory_update, reduce_rule_lists, rollout, ConstantPolicy, EnvTags, FailureCategory,
    FailureConfig, FrequencyDistiller, MemoryStore, OraclePolicy, Policy, RuleList, RulePolicy, RuleSynthesizer,
    TemplateSynthesizer, Trajectory,
};
use crate::builder::BuildError;
use crate::env::{Action, EnvConfig, EnvError, NavEnv, LONG_MAX_STEPS};
use crate::metrics::{aggregate, DEFAULT_DELTA_CM, DEFAULT_ETA};
use crate::nav::{difficulty_level, sample_episode, Episode, NavError, SampleConfig, LEVELS};
use crate::{seed, MetricReport};

pub const THRESHOLDS: [(u64, u64); 8] = [(80, 100), (75, 100), (70, 100), (65, 100), (60, 100), (55, 100), (50, 100), (45, 100)];
pub const WINDOW: usize = 5;
pub const MAX_LEVEL: usize = 7;
/// Fresh seeds tried per episode before the epoch fails.
pub const GENERATION_RETRIES: usize = 6;
/// Odd so the raster centre sits on the agent; wide enough for the side scans.
pub const RUN_EGO_SIZE: usize = 33;

pub fn threshold(level: usize) -> Ratio<u64> {
    let (n, d) = THRESHOLDS[level.min(MAX_LEVEL)];
    Ratio::new(n, d)
}

#[derive(Debug, Error)]
pub enum CoevolveError {
    #[error("scene generation: {0}")]
    Build(#[from] BuildError),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("epoch {epoch}: no episode after {attempts} attempts: {last}")]
    Generation { epoch: usize, attempts: usize, last: String },
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Level plus the recent epoch success rates, kept as exact fractions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub level: usize,
    pub window: VecDeque<Ratio<u64>>,
}

impl CurriculumState {
    pub fn push(&mut self, sr: Ratio<u64>) {
        self.window.push_back(sr);
        while self.window.len() > WINDOW {
            self.window.pop_front();
        }
    }

    /// Mean over the entries present.
    pub fn mean(&self) -> Option<Ratio<u64>> {
        if self.window.is_empty() {
            return None;
        }
        let sum = self.window.iter().fold(Ratio::from_integer(0), |a, b| a + b);
        Some(sum / self.window.len() as u64)
    }

    /// Advances one level when the window mean reaches the level's threshold;
    /// the window starts over after an advance.
    pub fn maybe_advance(&mut self) -> bool {
        let Some(m) = self.mean() else { return false };
        if self.level < MAX_LEVEL && m >= threshold(self.level) {
            self.level += 1;
            self.window.clear();
            true
        } else {
            false
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    CoEvolve,
    FixedL3,
    RandomLevel,
    NoLearning,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::CoEvolve, Condition::FixedL3, Condition::RandomLevel, Condition::NoLearning];

    pub fn learns(self) -> bool {
        self != Condition::NoLearning
    }

    pub fn gated(self) -> bool {
        matches!(self, Condition::CoEvolve | Condition::NoLearning)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::CoEvolve => "CoEvolve",
            Condition::FixedL3 => "FixedL3",
            Condition::RandomLevel => "RandomLevel",
            Condition::NoLearning => "NoLearning",
        })
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let k = s.to_ascii_lowercase().replace(['-', '_'], "");
        Condition::ALL
            .into_iter()
            .find(|c| c.to_string().to_ascii_lowercase() == k)
            .ok_or_else(|| format!("unknown condition {s:?}; expected CoEvolve, FixedL3, RandomLevel or NoLearning"))
    }
}

/// Who acts during a run. Only `Rules` learns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    Rules,
    Oracle,
    Constant(Action),
}

/// Missing fields take their defaults when deserialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub eval_every: usize,
    pub condition: Condition,
    pub seed: u64,
    pub agent: AgentKind,
    pub max_steps: usize,
    pub heldout_episodes: usize,
    pub train_scenes: usize,
    pub heldout_scenes: usize,
    pub window_cm: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            episodes_per_epoch: 20,
            eval_every: 5,
            condition: Condition::CoEvolve,
            seed: 0,
            agent: AgentKind::Rules,
            max_steps: LONG_MAX_STEPS,
            heldout_episodes: 100,
            train_scenes: 6,
            heldout_scenes: 5,
            window_cm: DEFAULT_WINDOW_CM,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CoevolveError> {
        let positive = [
            ("epochs", self.epochs),
            ("episodes_per_epoch", self.episodes_per_epoch),
            ("eval_every", self.eval_every),
            ("max_steps", self.max_steps),
            ("heldout_episodes", self.heldout_episodes),
            ("train_scenes", self.train_scenes),
            ("heldout_scenes", self.heldout_scenes),
        ];
        match positive.iter().find(|(_, v)| *v == 0) {
            Some((k, _)) => Err(CoevolveError::Config(format!("{k} must be positive"))),
            None => Ok(()),
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            max_steps: self.max_steps,
            success_threshold: DEFAULT_DELTA_CM,
            ego_size: RUN_EGO_SIZE,
        }
    }
}

/// A sampled episode and where it lives.
#[derive(Clone, Debug)]
pub struct Task {
    pub episode: Episode,
    pub heldout: bool,
    pub scene: usize,
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode_id: String,
    pub level: usize,
    pub success: bool,
    pub steps: usize,
    /// cm
    pub final_d: f64,
    pub spl: f64,
    pub failures: Vec<FailureCategory>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epoch: usize,
    pub metrics: MetricReport,
    /// Success rate per level of the held-out set.
    pub sr_by_level: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub level: Option<usize>,
    pub levels_used: Vec<usize>,
    pub outcomes: Vec<EpisodeOutcome>,
    pub successes: u64,
    pub episodes: u64,
    pub sr: f64,
    /// Window mean as "num/den" before any advance.
    pub window_mean: Option<String>,
    pub window_mean_f64: Option<f64>,
    pub threshold: Option<f64>,
    pub advanced: bool,
    pub next_level: Option<usize>,
    pub rule_count: usize,
    pub generation_retries: usize,
    pub eval: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config: RunConfig,
    pub epochs: Vec<EpochReport>,
    pub evals: Vec<EvalReport>,
    pub rules_final: RuleList,
    pub distillations: usize,
}

impl RunArtifact {
    pub fn final_eval(&self) -> Option<&EvalReport> {
        self.evals.last()
    }
}

/// Mutable state carried across epochs.
pub struct Learner {
    pub rules: RuleList,
    pub memory: MemoryStore,
    pub curriculum: CurriculumState,
    pub episodes_seen: usize,
    synthesizer: Box<dyn RuleSynthesizer>,
}

impl Default for Learner {
    fn default() -> Self {
        Self::new(Box::new(TemplateSynthesizer))
    }
}

impl Learner {
    pub fn new(synthesizer: Box<dyn RuleSynthesizer>) -> Self {
        Self {
            rules: RuleList::default(),
            memory: MemoryStore::default(),
            curriculum: CurriculumState::default(),
            episodes_seen: 0,
            synthesizer,
        }
    }
}

fn make_policy(agent: AgentKind, rules: &RuleList, world: &LevelWorld) -> Box<dyn Policy> {
    match agent {
        AgentKind::Rules => Box::new(RulePolicy::new(rules.clone())),
        AgentKind::Oracle => Box::new(OraclePolicy::new(world.grid.clone())),
        AgentKind::Constant(a) => Box::new(ConstantPolicy(a)),
    }
}

/// Samples one episode at `level` on a scene picked by `rng`, retrying with
/// fresh seeds and scenes.
fn generate_task<R: Rng>(
    pool: &ScenePool,
    heldout: bool,
    level: usize,
    rng: &mut R,
    forced_scene: Option<usize>,
    tag: &str,
) -> Result<(Task, usize), String> {
    let scenes = if heldout { &pool.heldout } else { &pool.train };
    let mut last = String::from("no scenes");
    for attempt in 0..GENERATION_RETRIES {
        let si = match forced_scene {
            Some(s) if attempt == 0 => s,
            _ => rng.random_range(0..scenes.len()),
        };
        let s = &scenes[si];
        let seed: u64 = rng.random();
        let world = match s.level(&pool.catalog, level) {
            Ok(w) => w,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        let mut cfg = SampleConfig::for_level(difficulty_level(level).map_err(|e| e.to_string())?);
        cfg.scene_ref = format!("{}-{tag}", s.name);
        match sample_episode(&world.grid, &world.scene, &pool.catalog, &cfg, seed) {
            Ok(episode) => {
                return Ok((
                    Task {
                        episode,
                        heldout,
                        scene: si,
                        level,
                    },
                    attempt,
                ))
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(last)
}

/// Fixed before any training: `n` episodes stratified over the levels and the
/// held-out scenes.
pub fn heldout_set(pool: &ScenePool, n: usize, run_seed: u64) -> Result<Vec<Task>, CoevolveError> {
    let mut rng = seed::stream(run_seed, "heldout");
    (0..n)
        .map(|i| {
            let level = i % LEVELS.len();
            let scene = (i / LEVELS.len()) % pool.heldout.len();
            generate_task(pool, true, level, &mut rng, Some(scene), &format!("h{i:03}"))
                .map(|(t, _)| t)
                .map_err(|last| CoevolveError::Generation {
                    epoch: 0,
                    attempts: GENERATION_RETRIES,
                    last,
                })
        })
        .collect()
}

fn world_of(pool: &ScenePool, t: &Task) -> Result<Arc<LevelWorld>, NavError> {
    let s = if t.heldout { &pool.heldout[t.scene] } else { &pool.train[t.scene] };
    s.level(&pool.catalog, t.level)
}

fn outcome(t: &Trajectory, level: usize, failures: Vec<FailureCategory>) -> EpisodeOutcome {
    EpisodeOutcome {
        episode_id: t.episode_id.clone(),
        level,
        success: t.success,
        steps: t.steps(),
        final_d: t.final_d,
        spl: crate::metrics::spl(&t.record).unwrap_or(0.0),
        failures,
    }
}

/// Evaluates the current (frozen) agent on `tasks`.
pub fn evaluate(
    pool: &ScenePool,
    tasks: &[Task],
    agent: AgentKind,
    rules: &RuleList,
    env_config: &EnvConfig,
    epoch: usize,
    episode_index: usize,
) -> Result<EvalReport, CoevolveError> {
    let trajs = rollout_all(pool, tasks, agent, rules, env_config, episode_index, false)?;
    let records: Vec<_> = trajs.iter().map(|(t, _)| t.record.clone()).collect();
    let metrics = aggregate(&records, DEFAULT_ETA, DEFAULT_DELTA_CM)
        .map_err(|e| CoevolveError::Config(format!("held-out set: {e}")))?;
    let mut by_level = vec![(0usize, 0usize); LEVELS.len()];
    for (t, task) in trajs.iter().map(|(t, _)| t).zip(tasks) {
        by_level[task.level].0 += t.success as usize;
        by_level[task.level].1 += 1;
    }
    Ok(EvalReport {
        epoch,
        metrics,
        sr_by_level: by_level
            .into_iter()
            .map(|(s, n)| if n == 0 { 0.0 } else { s as f64 / n as f64 })
            .collect(),
    })
}

/// Parallel rollouts, each with its own copy of the rules. With
/// `per_task_index` every task gets its own episode index counting up from
/// `first_index`; otherwise all share it.
fn rollout_all(
    pool: &ScenePool,
    tasks: &[Task],
    agent: AgentKind,
    rules: &RuleList,
    env_config: &EnvConfig,
    first_index: usize,
    per_task_index: bool,
) -> Result<Vec<(Trajectory, RuleList)>, CoevolveError> {
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let world = world_of(pool, t)?;
            let mut env = NavEnv::new(world.map.clone(), env_config.clone());
            let idx = if per_task_index { first_index + i } else { first_index };
            match agent {
                AgentKind::Rules => {
                    let mut p = RulePolicy::new(rules.clone());
                    let traj = rollout(&mut env, &t.episode, &mut p, idx)?;
                    Ok((traj, p.rules))
                }
                _ => {
                    let mut p = make_policy(agent, rules, &world);
                    let traj = rollout(&mut env, &t.episode, p.as_mut(), idx)?;
                    Ok((traj, rules.clone()))
                }
            }
        })
        .collect()
}

/// One epoch: generate, roll out, learn, gate.
pub fn run_epoch(
    learner: &mut Learner,
    pool: &ScenePool,
    config: &RunConfig,
    epoch: usize,
) -> Result<EpochReport, CoevolveError> {
    let mut rng = seed::stream(config.seed, &format!("{}/epoch/{epoch}", config.condition));
    let n = config.episodes_per_epoch;
    let base_level = match config.condition {
        Condition::FixedL3 => Some(3),
        Condition::RandomLevel => None,
        Condition::CoEvolve | Condition::NoLearning => Some(learner.curriculum.level),
    };
    let mut tasks = Vec::with_capacity(n);
    let mut retries = 0;
    for i in 0..n {
        let level = base_level.unwrap_or_else(|| rng.random_range(0..LEVELS.len()));
        let (t, r) = generate_task(pool, false, level, &mut rng, None, &format!("e{epoch:02}-{i:02}"))
            .map_err(|last| CoevolveError::Generation {
                epoch,
                attempts: GENERATION_RETRIES,
                last,
            })?;
        retries += r;
        tasks.push(t);
    }
    let first = learner.episodes_seen + 1;
    let env_config = config.env_config();
    let results = rollout_all(pool, &tasks, config.agent, &learner.rules, &env_config, first, true)?;

    let learning = config.condition.learns() && config.agent == AgentKind::Rules;
    if learning {
        let clones: Vec<RuleList> = results.iter().map(|(_, r)| r.clone()).collect();
        learner.rules = reduce_rule_lists(&learner.rules, &clones);
    }
    let fcfg = FailureConfig::default();
    let mut outcomes = Vec::with_capacity(n);
    let mut successes = 0u64;
    for (i, ((traj, _), task)) in results.iter().zip(&tasks).enumerate() {
        let idx = first + i;
        let failures = extract_failures(traj, &task.episode, &fcfg);
        if learning {
            let new = learner.synthesizer.synthesize(&failures, traj, &learner.rules, idx);
            learner.rules = crate::agents::update_rules(std::mem::take(&mut learner.rules), new, idx);
            let world = world_of(pool, task)?;
            let scene = &pool.train[task.scene];
            let tags = EnvTags::new(world.density, task.episode.l_star, scene.archetype.as_str());
            memory_update(&mut learner.memory, traj, &task.episode, tags, &failures, idx, &FrequencyDistiller);
        }
        successes += traj.success as u64;
        outcomes.push(outcome(traj, task.level, failures.iter().map(|f| f.category).collect()));
    }
    learner.episodes_seen += n;

    let sr = Ratio::new(successes, n as u64);
    let (mut window_mean, mut advanced, mut thr) = (None, false, None);
    if config.condition.gated() {
        learner.curriculum.push(sr);
        let m = learner.curriculum.mean().expect("just pushed");
        window_mean = Some(m);
        thr = Some(threshold(learner.curriculum.level));
        advanced = learner.curriculum.maybe_advance();
    }
    let mut levels_used: Vec<usize> = tasks.iter().map(|t| t.level).collect();
    levels_used.sort_unstable();
    levels_used.dedup();
    Ok(EpochReport {
        epoch,
        level: base_level,
        levels_used,
        outcomes,
        successes,
        episodes: n as u64,
        sr: successes as f64 / n as f64,
        window_mean: window_mean.map(|m| format!("{}/{}", m.numer(), m.denom())),
        window_mean_f64: window_mean.map(|m| *m.numer() as f64 / *m.denom() as f64),
        threshold: thr.map(|t| *t.numer() as f64 / *t.denom() as f64),
        advanced,
        next_level: config.condition.gated().then_some(learner.curriculum.level),
        rule_count: learner.rules.len(),
        generation_retries: retries,
        eval: None,
    })
}

/// Full run on a prepared pool against a fixed held-out set.
pub fn run_experiment_on(pool: &ScenePool, heldout: &[Task], config: &RunConfig) -> Result<RunArtifact, CoevolveError> {
    config.validate()?;
    let mut learner = Learner::default();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut evals = Vec::new();
    for e in 1..=config.epochs {
        let mut rep = run_epoch(&mut learner, pool, config, e)?;
        if e % config.eval_every == 0 {
            let ev = evaluate(
                pool,
                heldout,
                config.agent,
                &learner.rules,
                &config.env_config(),
                e,
                learner.episodes_seen,
            )?;
            evals.push(ev.clone());
            rep.eval = Some(ev);
        }
        epochs.push(rep);
    }
    Ok(RunArtifact {
        config: config.clone(),
        epochs,
        evals,
        rules_final: learner.rules,
        distillations: learner.memory.distillations,
    })
}

/// Builds the scene pool and held-out set from the config seed, then runs.
pub fn run_experiment(config: &RunConfig, work: &std::path::Path) -> Result<RunArtifact, CoevolveError> {
    config.validate()?;
    let pool = ScenePool::generate(
        Arc::new(crate::scene::AssetCatalog::builtin()),
        config.seed,
        config.train_scenes,
        config.heldout_scenes,
        config.window_cm,
        work,
    )?;
    pool.prepare()?;
    let heldout = heldout_set(&pool, config.heldout_episodes, config.seed)?;
    run_experiment_on(&pool, &heldout, config)
}
