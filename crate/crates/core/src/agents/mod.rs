//! Policies, rollouts, failure extraction, the evolving rule list and the
//! three-level memory.

mod failures;
mod memory;
mod oracle;
mod remote;
mod rules;

use serde::{Deserialize, Serialize};

pub use failures::{extract_failures, FailureCategory, FailureConfig, FailureMode};
pub use memory::{
    memory_retrieve, memory_update, ContextBundle, Distiller, EnvTags, FrequencyDistiller, L1Step, L2Record,
    MemoryStore, DISTILL_EVERY,
};
pub use oracle::{oracle_actions, OraclePlan, OraclePolicy};
pub use remote::{Direct, PolicyHandler, RemotePolicy, ToolCaller};
pub use rules::{
    first_match, reduce_rule_lists, rule_policy_act, synthesize_rules, update_rules, Condition, Decision, Directive, Features,
    Predicate, Rule, RuleList, RulePolicy, RuleSynthesizer, TemplateSynthesizer, BAND_M, MAX_BAND, PRUNE_AFTER,
    RULE_CAP,
};

use crate::env::{codes, Action, EnvError, NavEnv, Observation, MOVE_STEP_CM, TURN_DEG};
use crate::geom::sin_cos_deg;
use crate::nav::Episode;
use crate::TrajectoryRecord;

/// Greedy goes straight when the goal is within this bearing, degrees.
pub const ALIGN_DEG: f64 = 22.5;
/// Greedy stops when the goal is closer than this, metres.
pub const GREEDY_STOP_M: f64 = 0.9;
/// How far the blocked-span scan looks to each side, cells.
pub const SPAN_LIMIT: usize = 16;

/// World cell under a point, in step-sized cells.
pub fn world_cell(x: f64, y: f64) -> (i64, i64) {
    ((x / MOVE_STEP_CM).floor() as i64, (y / MOVE_STEP_CM).floor() as i64)
}

/// Raster reading of the cells around the agent. Exact for odd raster sizes,
/// where the centre pixel sits on the agent and neighbours are one step away.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Surroundings {
    pub forward_free: bool,
    /// Consecutive blocked cells in the row ahead, starting at the centre column.
    pub blocked_left: usize,
    pub blocked_right: usize,
}

pub fn surroundings(obs: &Observation) -> Surroundings {
    let r = &obs.ego_raster;
    if r.width < 3 || r.height < 3 {
        return Surroundings {
            forward_free: true,
            ..Default::default()
        };
    }
    let mid_col = (r.width - 1) / 2;
    let row = (r.height - 1) / 2 - 1;
    let blocked = |col: usize| codes::is_blocking(r.get(col, row));
    let forward_free = !blocked(mid_col);
    let mut s = Surroundings {
        forward_free,
        ..Default::default()
    };
    if !forward_free {
        s.blocked_left = (0..SPAN_LIMIT)
            .take_while(|k| mid_col >= *k && blocked(mid_col - k))
            .count();
        s.blocked_right = (0..SPAN_LIMIT)
            .take_while(|k| mid_col + k < r.width && blocked(mid_col + k))
            .count();
    }
    s
}

/// Whether the cell one step away at `phi` degrees off the heading (positive to
/// the left) is free, read from the nearest raster pixel.
pub fn free_toward(obs: &Observation, phi: f64) -> bool {
    let r = &obs.ego_raster;
    if r.width < 3 || r.height < 3 {
        return true;
    }
    let (s, c) = sin_cos_deg(phi);
    let row = ((r.height - 1) as f64 / 2.0 - c).round() as usize;
    let col = ((r.width - 1) as f64 / 2.0 - s).round() as usize;
    !codes::is_blocking(r.get(col, row))
}

/// One observation and the action taken from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub cell: (i64, i64),
    pub position: [f64; 2],
    pub yaw: f64,
    pub bearing: f64,
    /// metres
    pub distance: f64,
    pub surroundings: Surroundings,
    /// Cell one step ahead.
    pub ahead: (i64, i64),
    pub action: Option<Action>,
    pub collision: bool,
    pub fired: Option<String>,
}

/// What a policy may remember about the current episode: odometry plus its own
/// past observations and actions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub ticks: Vec<Tick>,
}

impl History {
    pub fn current(&self) -> Option<&Tick> {
        self.ticks.last()
    }

    /// Times the current cell was entered within the last `window` ticks.
    pub fn revisits(&self, window: usize) -> usize {
        let Some(cur) = self.current() else { return 0 };
        let n = self.ticks.len();
        let lo = n.saturating_sub(window);
        (lo..n)
            .filter(|&i| self.ticks[i].cell == cur.cell && (i == 0 || self.ticks[i - 1].cell != cur.cell))
            .count()
    }

    /// Earlier contacts with the cell currently ahead.
    pub fn contacts_ahead(&self) -> usize {
        let Some(cur) = self.current() else { return 0 };
        self.ticks[..self.ticks.len() - 1]
            .iter()
            .filter(|t| t.ahead == cur.ahead && is_contact(t))
            .count()
    }
}

/// A bump, or a turn away from an obstacle straight ahead of an aligned agent.
pub fn is_contact(t: &Tick) -> bool {
    match t.action {
        Some(Action::MoveForward) => t.collision,
        Some(Action::TurnLeft | Action::TurnRight) => !t.surroundings.forward_free && t.bearing.abs() <= ALIGN_DEG,
        _ => false,
    }
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    fn begin_episode(&mut self, _episode: &Episode, _episode_index: usize) {}

    fn act(&mut self, obs: &Observation, history: &History) -> Action;

    /// Rule behind the last action, for policies that have rules.
    fn last_fired(&self) -> Option<&str> {
        None
    }
}

/// Memoryless baseline: stop near the goal, go straight when aligned and clear,
/// otherwise turn toward the goal.
pub fn greedy_policy(obs: &Observation, _history: &History) -> Action {
    if obs.distance < GREEDY_STOP_M {
        return Action::Stop;
    }
    if obs.bearing.abs() <= ALIGN_DEG && surroundings(obs).forward_free {
        Action::MoveForward
    } else if obs.bearing < 0.0 {
        Action::TurnLeft
    } else {
        Action::TurnRight
    }
}

#[derive(Clone, Debug, Default)]
pub struct GreedyPolicy;

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        "greedy"
    }

    fn act(&mut self, obs: &Observation, history: &History) -> Action {
        greedy_policy(obs, history)
    }
}

/// Always the same action; the null agent of the gating checks.
#[derive(Clone, Debug)]
pub struct ConstantPolicy(pub Action);

impl Policy for ConstantPolicy {
    fn name(&self) -> &str {
        "constant"
    }

    fn act(&mut self, _obs: &Observation, _history: &History) -> Action {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: String,
    pub level: Option<usize>,
    pub history: History,
    pub success: bool,
    pub terminated: bool,
    pub truncated: bool,
    /// cm
    pub final_d: f64,
    pub record: TrajectoryRecord,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.history.ticks.len().saturating_sub(1)
    }
}

fn tick(obs: &Observation, x: f64, y: f64, yaw: f64) -> Tick {
    let (s, c) = sin_cos_deg(yaw);
    Tick {
        cell: world_cell(x, y),
        position: [x, y],
        yaw,
        bearing: obs.bearing,
        distance: obs.distance,
        surroundings: surroundings(obs),
        ahead: world_cell(x + MOVE_STEP_CM * c, y + MOVE_STEP_CM * s),
        action: None,
        collision: false,
        fired: None,
    }
}

/// Runs one episode to termination or truncation.
pub fn rollout(
    env: &mut NavEnv,
    episode: &Episode,
    policy: &mut dyn Policy,
    episode_index: usize,
) -> Result<Trajectory, EnvError> {
    let mut obs = env.reset(episode, episode.seed)?;
    policy.begin_episode(episode, episode_index);
    let pose = env.pose().expect("reset sets a pose");
    let mut history = History {
        ticks: vec![tick(&obs, pose.position.x, pose.position.y, pose.yaw)],
    };
    let (mut terminated, mut truncated, mut success, mut final_d) = (false, false, false, obs.distance * 100.0);
    while !(terminated || truncated) {
        let action = policy.act(&obs, &history);
        let r = env.step(action)?;
        let last = history.ticks.last_mut().expect("history starts non-empty");
        last.action = Some(action);
        last.collision = r.info.collision;
        last.fired = policy.last_fired().map(str::to_string);
        let pose = env.pose().expect("stepping keeps a pose");
        obs = r.observation;
        history.ticks.push(tick(&obs, pose.position.x, pose.position.y, pose.yaw));
        terminated = r.terminated;
        truncated = r.truncated;
        success = r.info.success;
        final_d = r.info.d * 100.0;
    }
    let poses: Vec<[f64; 2]> = history.ticks.iter().map(|t| t.position).collect();
    let mut record = TrajectoryRecord::new(poses, final_d, episode.reference_path.clone(), episode.l_star);
    record.d0 = episode.d0;
    record.success_threshold = env.config.success_threshold;
    Ok(Trajectory {
        episode_id: episode.id.clone(),
        level: episode.level,
        history,
        success,
        terminated,
        truncated,
        final_d,
        record,
    })
}

/// Turns needed to rotate from `yaw` to `target`, signed: positive is left.
pub fn turns_toward(yaw: f64, target: f64) -> i32 {
    let d = crate::geom::normalize_deg(target - yaw);
    (d / TURN_DEG).round() as i32
}
