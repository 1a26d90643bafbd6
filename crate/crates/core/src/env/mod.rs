//! Step/reset navigation environment over an occupancy grid.

mod serve;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use serve::{observation_from_json, observation_json, EnvHandler};

use crate::geom::{normalize_deg, sin_cos_deg};
use crate::nav::{Cell, DistanceField, Episode, NavError, OccupancyGrid, Pose};
use crate::raster::Raster;
use crate::scene::{AssetCatalog, Category, SceneGraph};
use crate::Vec3;

pub const MOVE_STEP_CM: f64 = 25.0;
pub const TURN_DEG: f64 = 15.0;
pub const SUCCESS_THRESHOLD_CM: f64 = 100.0;
pub const DEFAULT_MAX_STEPS: usize = 40;
/// Step budget used by curriculum runs.
pub const LONG_MAX_STEPS: usize = 500;
pub const EGO_SIZE: usize = 224;
pub const STEP_PENALTY: f64 = 0.01;
pub const SUCCESS_BONUS: f64 = 1.0;

/// Cell codes in the egocentric raster.
pub mod codes {
    pub const FREE: u8 = 0;
    pub const ROAD: u8 = 1;
    pub const BUILDING: u8 = 2;
    pub const TREE: u8 = 3;
    pub const VEHICLE: u8 = 4;
    pub const FURNITURE: u8 = 5;
    pub const PROP: u8 = 6;
    pub const CONTAINER: u8 = 7;
    pub const GOAL: u8 = 8;
    pub const OFF_MAP: u8 = 255;

    pub fn is_blocking(code: u8) -> bool {
        !matches!(code, FREE | ROAD | GOAL)
    }
}

fn category_code(c: Category) -> u8 {
    match c {
        Category::Road => codes::ROAD,
        Category::Building => codes::BUILDING,
        Category::Tree => codes::TREE,
        Category::Vehicle => codes::VEHICLE,
        Category::StreetFurniture => codes::FURNITURE,
        Category::Prop => codes::PROP,
        Category::Container => codes::CONTAINER,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveForward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::MoveForward, Action::TurnLeft, Action::TurnRight, Action::Stop];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub max_steps: usize,
    /// cm
    pub success_threshold: f64,
    pub ego_size: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            success_threshold: SUCCESS_THRESHOLD_CM,
            ego_size: EGO_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// Heading-up window centred on the agent, one pixel per grid cell.
    pub ego_raster: Raster,
    /// Signed degrees from heading to goal; goal on the left is negative.
    pub bearing: f64,
    /// Geodesic distance to the goal, metres.
    pub distance: f64,
    pub step_count: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub success: bool,
    /// Distance to goal, metres.
    pub d: f64,
    pub collision: bool,
    /// Goal not reachable from the agent's cell; `d` is straight-line.
    pub unreachable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("start cell is occupied or off the grid")]
    StartOccupied,
    #[error("step called before reset")]
    NotReset,
    #[error("episode already finished; call reset")]
    Finished,
    #[error(transparent)]
    Nav(#[from] NavError),
}

/// Dense reward: normalized progress, a per-step penalty and a success bonus.
pub fn compute_reward(prev_d: f64, new_d: f64, d0: f64, success_stop: bool) -> f64 {
    (prev_d - new_d) / d0 - STEP_PENALTY + if success_stop { SUCCESS_BONUS } else { 0.0 }
}

/// One line of the trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub action: Option<Action>,
    pub pose: Pose,
    pub bearing: f64,
    pub distance_m: f64,
    pub reward: f64,
    pub collision: bool,
    pub terminated: bool,
    pub truncated: bool,
    pub success: bool,
}

/// Category code per grid cell, built once per scene window.
#[derive(Clone, Debug)]
pub struct SemanticMap {
    grid: Arc<OccupancyGrid>,
    codes: Vec<u8>,
}

impl SemanticMap {
    pub fn new(scene: &SceneGraph, catalog: &AssetCatalog, grid: Arc<OccupancyGrid>) -> Result<Self, NavError> {
        let mut codes = vec![codes::FREE; grid.len()];
        // Roads first so anything standing on them wins.
        let mut actors: Vec<_> = scene.actors().collect();
        actors.sort_by_key(|a| !a.category.is_environment());
        for a in actors {
            let b = a.world_aabb(catalog).map_err(|e| NavError::Scene(e.to_string()))?;
            let code = category_code(a.category);
            for c in grid.rect_cells([b.min.x, b.min.y], [b.max.x, b.max.y]) {
                codes[grid.index(c)] = code;
            }
        }
        // The occupancy grid is authoritative for blocking.
        for i in 0..grid.len() {
            let c = grid.cell_at(i);
            if !grid.is_free(c) && !codes::is_blocking(codes[i]) {
                codes[i] = codes::PROP;
            } else if grid.is_free(c) && codes::is_blocking(codes[i]) {
                codes[i] = codes::FREE;
            }
        }
        Ok(Self { grid, codes })
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn code(&self, c: Cell) -> u8 {
        self.codes[self.grid.index(c)]
    }

    /// Heading-up raster: row 0 is furthest ahead, column 0 furthest left.
    pub fn egocentric(&self, x: f64, y: f64, yaw: f64, size: usize, goal: Option<Cell>) -> Raster {
        let g = &*self.grid;
        let mut r = Raster::filled(size, size, codes::OFF_MAP);
        let (s, c) = sin_cos_deg(yaw);
        let cs = g.cell_size;
        let mid = (size as f64 - 1.0) / 2.0;
        let inv = 1.0 / cs;
        for row in 0..size {
            let fwd = (mid - row as f64) * cs;
            for col in 0..size {
                let right = (col as f64 - mid) * cs;
                let wx = x + fwd * c + right * s;
                let wy = y + fwd * s - right * c;
                let fx = ((wx - g.origin.x) * inv).floor();
                let fy = ((wy - g.origin.y) * inv).floor();
                if fx < 0.0 || fy < 0.0 || fx >= g.width as f64 || fy >= g.height as f64 {
                    continue;
                }
                let cell = (fx as usize, fy as usize);
                r.pixels[row * size + col] = if Some(cell) == goal { codes::GOAL } else { self.code(cell) };
            }
        }
        r
    }
}

struct Live {
    episode: Episode,
    pose: Pose,
    goal_cell: Cell,
    field: DistanceField,
    d0: f64,
    d: f64,
    steps: usize,
    done: bool,
    log: Vec<StepLog>,
}

pub struct NavEnv {
    map: Arc<SemanticMap>,
    pub config: EnvConfig,
    live: Option<Live>,
}

impl NavEnv {
    pub fn new(map: Arc<SemanticMap>, config: EnvConfig) -> Self {
        Self { map, config, live: None }
    }

    pub fn from_scene(
        scene: &SceneGraph,
        catalog: &AssetCatalog,
        grid: Arc<OccupancyGrid>,
        config: EnvConfig,
    ) -> Result<Self, NavError> {
        Ok(Self::new(Arc::new(SemanticMap::new(scene, catalog, grid)?), config))
    }

    pub fn map(&self) -> &SemanticMap {
        &self.map
    }

    pub fn pose(&self) -> Option<Pose> {
        self.live.as_ref().map(|l| l.pose)
    }

    pub fn episode(&self) -> Option<&Episode> {
        self.live.as_ref().map(|l| &l.episode)
    }

    pub fn log(&self) -> &[StepLog] {
        self.live.as_ref().map_or(&[], |l| &l.log)
    }

    /// Distance to goal in cm and whether it is geodesic.
    fn distance(&self, field: &DistanceField, goal: [f64; 2], x: f64, y: f64) -> (f64, bool) {
        match self.map.grid.cell_of(x, y).and_then(|c| field.get(c)) {
            Some(d) => (d, true),
            None => ((goal[0] - x).hypot(goal[1] - y), false),
        }
    }

    fn bearing(pose: &Pose, goal: [f64; 2]) -> f64 {
        let to_goal = (goal[1] - pose.position.y).atan2(goal[0] - pose.position.x).to_degrees();
        normalize_deg(pose.yaw - to_goal)
    }

    fn observe(&self, live: &Live) -> Observation {
        let p = &live.pose;
        Observation {
            ego_raster: self
                .map
                .egocentric(p.position.x, p.position.y, p.yaw, self.config.ego_size, Some(live.goal_cell)),
            bearing: Self::bearing(p, live.episode.goal.position()),
            distance: live.d / 100.0,
            step_count: live.steps,
        }
    }

    /// Places the agent at the episode start. The environment has no stochastic
    /// dynamics, so `seed` only labels the run.
    pub fn reset(&mut self, episode: &Episode, _seed: u64) -> Result<Observation, EnvError> {
        let g = &self.map.grid;
        g.cell_of(episode.start.position.x, episode.start.position.y)
            .filter(|c| g.is_free(*c))
            .ok_or(EnvError::StartOccupied)?;
        let gp = episode.goal.position();
        let goal_cell = match g.cell_of(gp[0], gp[1]) {
            Some(c) if g.is_free(c) => c,
            _ => g.nearest_free(gp[0], gp[1]).ok_or(NavError::OffGrid(gp))?,
        };
        let field = DistanceField::new(g, goal_cell, None)?;
        let pose = Pose {
            position: Vec3::new(episode.start.position.x, episode.start.position.y, g.origin.z),
            yaw: normalize_deg(episode.start.yaw),
        };
        let (d, _) = self.distance(&field, gp, pose.position.x, pose.position.y);
        let d0 = if episode.d0 > 0.0 { episode.d0 } else { d.max(1.0) };
        let mut live = Live {
            episode: episode.clone(),
            pose,
            goal_cell,
            field,
            d0,
            d,
            steps: 0,
            done: false,
            log: Vec::new(),
        };
        let obs = self.observe(&live);
        live.log.push(StepLog {
            step: 0,
            action: None,
            pose,
            bearing: obs.bearing,
            distance_m: obs.distance,
            reward: 0.0,
            collision: false,
            terminated: false,
            truncated: false,
            success: false,
        });
        self.live = Some(live);
        Ok(obs)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        let mut live = self.live.take().ok_or(EnvError::NotReset)?;
        if live.done {
            self.live = Some(live);
            return Err(EnvError::Finished);
        }
        let g = &self.map.grid;
        let mut collision = false;
        match action {
            Action::MoveForward => {
                let (s, c) = sin_cos_deg(live.pose.yaw);
                let nx = live.pose.position.x + MOVE_STEP_CM * c;
                let ny = live.pose.position.y + MOVE_STEP_CM * s;
                if g.cell_of(nx, ny).is_some_and(|cell| g.is_free(cell)) {
                    live.pose.position.x = nx;
                    live.pose.position.y = ny;
                } else {
                    collision = true;
                }
            }
            Action::TurnLeft => live.pose.yaw = normalize_deg(live.pose.yaw + TURN_DEG),
            Action::TurnRight => live.pose.yaw = normalize_deg(live.pose.yaw - TURN_DEG),
            Action::Stop => {}
        }
        live.steps += 1;
        let gp = live.episode.goal.position();
        let (new_d, geodesic) = self.distance(&live.field, gp, live.pose.position.x, live.pose.position.y);
        let terminated = action == Action::Stop;
        let success = terminated && new_d < self.config.success_threshold;
        let truncated = live.steps >= self.config.max_steps;
        let reward = compute_reward(live.d, new_d, live.d0, success);
        live.d = new_d;
        live.done = terminated || truncated;
        let observation = self.observe(&live);
        let info = StepInfo {
            success,
            d: new_d / 100.0,
            collision,
            unreachable: !geodesic,
        };
        live.log.push(StepLog {
            step: live.steps,
            action: Some(action),
            pose: live.pose,
            bearing: observation.bearing,
            distance_m: observation.distance,
            reward,
            collision,
            terminated,
            truncated,
            success,
        });
        self.live = Some(live);
        Ok(StepResult {
            observation,
            reward,
            terminated,
            truncated,
            info,
        })
    }

    /// JSONL trajectory log of the current episode.
    pub fn log_jsonl(&self) -> String {
        let mut s = String::new();
        for l in self.log() {
            s.push_str(&serde_json::to_string(l).expect("log serializes"));
            s.push('\n');
        }
        s
    }

    /// sha256 of the trajectory log.
    pub fn log_hash(&self) -> String {
        hex::encode(Sha256::digest(self.log_jsonl().as_bytes()))
    }
}
