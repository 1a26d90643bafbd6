//! Walkable grids, geodesic paths, episode sampling and difficulty levels.

mod episode;
mod grid;
mod path;

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use episode::{
    apply_difficulty, rebuild_like, sample_episode, Augmented, FilterStats, SampleConfig, StartYawPolicy, DEFAULT_BOUNDS,
    DEFAULT_MAX_TRIES, MAX_RESAMPLES,
};
pub use grid::{build_grid, build_grid_region, Cell, OccupancyGrid, DEFAULT_CELL_SIZE};
pub use path::{geodesic_distance, line_of_sight, neighbours, shortest_path, DistanceField, GridPath, Moves};

use crate::scene::Category;
use crate::Vec3;

#[derive(Debug, Error)]
pub enum NavError {
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
    #[error("scene has no ground plane")]
    NoGround,
    #[error("cell {0:?} is occupied")]
    BlockedEndpoint(Cell),
    #[error("point {0:?} is outside the grid")]
    OffGrid([f64; 2]),
    #[error("no path from {from:?} to {to:?}")]
    Unreachable { from: Cell, to: Cell },
    #[error("scene has no actor of category {0}")]
    MissingCategory(Category),
    #[error("sampling failed after {tries} tries: {stats}")]
    SamplingFailure { tries: usize, stats: FilterStats },
    #[error("level {0} does not exist")]
    InvalidLevel(usize),
    #[error("obstacle density {target} unreachable without fragmenting the walkable area ({attempts} attempts)")]
    DensityUnreachable { target: f64, attempts: usize },
    #[error("scene: {0}")]
    Scene(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyLevel {
    pub index: usize,
    /// Geodesic start-goal length bounds, cm.
    pub path_len_range: (f64, f64),
    /// Start yaw deviates from the goal bearing by at most this, degrees.
    pub heading_offset_max: f64,
    /// Fraction of the originally walkable area covered by added obstacles.
    pub obstacle_density: f64,
}

const fn level(index: usize, lo: f64, hi: f64, heading: f64, density: f64) -> DifficultyLevel {
    DifficultyLevel {
        index,
        path_len_range: (lo, hi),
        heading_offset_max: heading,
        obstacle_density: density,
    }
}

pub const LEVELS: [DifficultyLevel; 8] = [
    level(0, 400.0, 800.0, 15.0, 0.00),
    level(1, 600.0, 1000.0, 30.0, 0.05),
    level(2, 800.0, 1400.0, 45.0, 0.10),
    level(3, 1000.0, 1800.0, 60.0, 0.15),
    level(4, 1200.0, 2200.0, 90.0, 0.20),
    level(5, 1500.0, 2600.0, 120.0, 0.25),
    level(6, 2000.0, 3000.0, 150.0, 0.30),
    level(7, 2500.0, 3500.0, 180.0, 0.35),
];

pub fn difficulty_level(index: usize) -> Result<&'static DifficultyLevel, NavError> {
    LEVELS.get(index).ok_or(NavError::InvalidLevel(index))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskType {
    PointNav,
    ObjectNav,
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskType::PointNav => "PointNav",
            TaskType::ObjectNav => "ObjectNav",
        })
    }
}

/// Ground position plus heading in degrees (0 = +X, counter-clockwise positive).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Goal {
    Point { position: [f64; 2] },
    Object { category: Category, actor: String, position: [f64; 2] },
}

impl Goal {
    /// Coordinate the agent must reach, cm.
    pub fn position(&self) -> [f64; 2] {
        match self {
            Goal::Point { position } | Goal::Object { position, .. } => *position,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub scene_ref: String,
    pub task_type: TaskType,
    pub start: Pose,
    pub goal: Goal,
    pub reference_path: Vec<[f64; 2]>,
    pub l_star: f64,
    pub d0: f64,
    #[serde(default)]
    pub level: Option<usize>,
    pub seed: u64,
}

pub fn write_episodes<W: Write>(mut w: W, episodes: &[Episode]) -> io::Result<()> {
    for e in episodes {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_episodes<R: BufRead>(r: R) -> io::Result<Vec<Episode>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        out.push(e);
    }
    Ok(out)
}
