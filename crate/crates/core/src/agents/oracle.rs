use std::collections::VecDeque;
use std::sync::Arc;

use thiserror::Error;

use super::{History, Policy};
use crate::env::{Action, Observation, MOVE_STEP_CM, TURN_DEG};
use crate::geom::{normalize_deg, sin_cos_deg};
use crate::nav::{neighbours, Cell, DistanceField, Episode, OccupancyGrid};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("episode has no reference path")]
    NoReference,
    #[error("position {0:?} is off the grid or blocked")]
    Blocked([f64; 2]),
    #[error("no reference cell reachable from {0:?}")]
    Lost(Cell),
    #[error("plan exceeded {0} actions")]
    Runaway(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OraclePlan {
    /// Ends with Stop.
    pub actions: Vec<Action>,
    /// ⌈L*/25⌉ steps, one extra per path cell, a half turn per bend, and the Stop.
    pub budget: usize,
}

impl OraclePlan {
    pub fn fits(&self, max_steps: usize) -> bool {
        self.actions.len() <= max_steps
    }
}

/// Replays the environment's kinematics with privileged access to the grid:
/// each step takes the turn count and forward move that lands on the cell with
/// the smallest geodesic distance to the goal, fewest turns first, and stops
/// once within one cell of the goal.
pub fn oracle_actions(grid: &OccupancyGrid, episode: &Episode) -> Result<OraclePlan, OracleError> {
    let path: Vec<Cell> = episode
        .reference_path
        .iter()
        .map(|p| grid.cell_of(p[0], p[1]).ok_or(OracleError::Blocked(*p)))
        .collect::<Result<_, _>>()?;
    let goal = *path.last().ok_or(OracleError::NoReference)?;
    let field = DistanceField::new(grid, goal, None).map_err(|_| OracleError::Lost(goal))?;
    let bends = path
        .windows(3)
        .filter(|w| {
            let d1 = (w[1].0 as i64 - w[0].0 as i64, w[1].1 as i64 - w[0].1 as i64);
            let d2 = (w[2].0 as i64 - w[1].0 as i64, w[2].1 as i64 - w[1].1 as i64);
            d1 != d2
        })
        .count();
    let half_turn = (180.0 / TURN_DEG) as usize;
    let budget = (episode.l_star / MOVE_STEP_CM).ceil() as usize + path.len() + half_turn * (bends + 1) + 1;
    let near = 1.5 * grid.cell_size;

    let mut pos = [episode.start.position.x, episode.start.position.y];
    let mut yaw = normalize_deg(episode.start.yaw);
    let mut actions = Vec::new();
    loop {
        if actions.len() > 4 * budget {
            return Err(OracleError::Runaway(4 * budget));
        }
        let cur = grid
            .cell_of(pos[0], pos[1])
            .filter(|c| grid.is_free(*c))
            .ok_or(OracleError::Blocked(pos))?;
        let d_cur = field.get(cur).ok_or(OracleError::Lost(cur))?;
        if d_cur < near {
            actions.push(Action::Stop);
            return Ok(OraclePlan { actions, budget });
        }
        let toward = neighbours(grid, cur)
            .filter_map(|(c, _)| field.get(c).map(|d| (d, c)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, c)| grid.center(c))
            .ok_or(OracleError::Lost(cur))?;
        // Turn counts in the order the environment would reach them: 0, +1, -1, ...
        let mut best: Option<(f64, f64, i32, i32, f64, [f64; 2])> = None;
        for k in candidate_turns(half_turn as i32) {
            let mut y = yaw;
            let step = if k > 0 { TURN_DEG } else { -TURN_DEG };
            for _ in 0..k.unsigned_abs() {
                y = normalize_deg(y + step);
            }
            let (s, c) = sin_cos_deg(y);
            let land = [pos[0] + MOVE_STEP_CM * c, pos[1] + MOVE_STEP_CM * s];
            let Some(lc) = grid.cell_of(land[0], land[1]).filter(|c| grid.is_free(*c)) else {
                continue;
            };
            let Some(d) = field.get(lc) else { continue };
            let aim = (land[0] - toward[0]).hypot(land[1] - toward[1]);
            let key = (d, if d < d_cur { 0.0 } else { aim }, k.abs());
            if best.is_none_or(|b| (key.0, key.1, key.2) < (b.0, b.1, b.2)) {
                best = Some((key.0, key.1, key.2, k, y, land));
            }
        }
        let (_, _, _, n, y, land) = best.ok_or(OracleError::Lost(cur))?;
        let turn = if n > 0 { Action::TurnLeft } else { Action::TurnRight };
        actions.extend(std::iter::repeat_n(turn, n.unsigned_abs() as usize));
        yaw = y;
        pos = land;
        actions.push(Action::MoveForward);
    }
}

fn candidate_turns(max: i32) -> impl Iterator<Item = i32> {
    std::iter::once(0).chain((1..=max).flat_map(move |k| [k, -k].into_iter().filter(move |v| *v > -max)))
}

/// Privileged baseline that plays back [`oracle_actions`]; stops at once when
/// no plan exists.
#[derive(Clone, Debug)]
pub struct OraclePolicy {
    grid: Arc<OccupancyGrid>,
    queue: VecDeque<Action>,
    pub last_plan: Option<Result<OraclePlan, OracleError>>,
}

impl OraclePolicy {
    pub fn new(grid: Arc<OccupancyGrid>) -> Self {
        Self {
            grid,
            queue: VecDeque::new(),
            last_plan: None,
        }
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn begin_episode(&mut self, episode: &Episode, _episode_index: usize) {
        let plan = oracle_actions(&self.grid, episode);
        self.queue = plan.as_ref().map(|p| p.actions.iter().copied().collect()).unwrap_or_default();
        self.last_plan = Some(plan);
    }

    fn act(&mut self, _obs: &Observation, _history: &History) -> Action {
        self.queue.pop_front().unwrap_or(Action::Stop)
    }
}
