use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{build_grid_region, Cell, OccupancyGrid};
use super::path::{line_of_sight, shortest_path, DistanceField};
use super::{DifficultyLevel, Episode, Goal, NavError, Pose, TaskType};
use crate::geom::normalize_deg;
use crate::scene::{AssetCatalog, Category, SceneGraph};
use crate::{seed, Transform, Vec3};

/// Geodesic length filter applied when no level is given, cm.
pub const DEFAULT_BOUNDS: (f64, f64) = (300.0, 2000.0);
pub const DEFAULT_MAX_TRIES: usize = 200;
/// Obstacle layouts tried before giving up on a density target.
pub const MAX_RESAMPLES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub task_type: TaskType,
    /// Inclusive geodesic length bounds, cm.
    pub bounds: (f64, f64),
    pub max_tries: usize,
    /// Start yaw = goal bearing + uniform(-max, +max).
    pub heading_offset_max: f64,
    pub level: Option<usize>,
    /// Target category for ObjectNav.
    pub category: Option<Category>,
    pub scene_ref: String,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            task_type: TaskType::PointNav,
            bounds: DEFAULT_BOUNDS,
            max_tries: DEFAULT_MAX_TRIES,
            heading_offset_max: 180.0,
            level: None,
            category: None,
            scene_ref: String::new(),
        }
    }
}

impl SampleConfig {
    pub fn for_level(level: &DifficultyLevel) -> Self {
        Self {
            bounds: level.path_len_range,
            heading_offset_max: level.heading_offset_max,
            level: Some(level.index),
            ..Self::default()
        }
    }
}

/// Why rejected draws were rejected.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub tries: usize,
    /// No free cell reachable from the draw.
    pub unreachable: usize,
    /// Reachable cells exist but none at a length inside the bounds.
    pub length: usize,
    pub no_line_of_sight: usize,
}

impl fmt::Display for FilterStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} tries: {} unreachable, {} outside length bounds, {} without line of sight",
            self.tries, self.unreachable, self.length, self.no_line_of_sight
        )
    }
}

fn bearing_deg(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0]).to_degrees()
}

fn rect_distance(p: [f64; 2], min: [f64; 2], max: [f64; 2]) -> f64 {
    let dx = (min[0] - p[0]).max(0.0).max(p[0] - max[0]);
    let dy = (min[1] - p[1]).max(0.0).max(p[1] - max[1]);
    (dx * dx + dy * dy).sqrt()
}

/// Rejection-samples one episode. Each try draws the start (PointNav) or goal
/// instance (ObjectNav), runs one capped Dijkstra from it and picks the other
/// endpoint uniformly among cells whose geodesic length lies in the bounds.
pub fn sample_episode(
    grid: &OccupancyGrid,
    scene: &SceneGraph,
    catalog: &AssetCatalog,
    cfg: &SampleConfig,
    seed: u64,
) -> Result<Episode, NavError> {
    let free: Vec<Cell> = grid.free_cells().collect();
    if free.len() < 2 {
        return Err(NavError::SamplingFailure {
            tries: 0,
            stats: FilterStats::default(),
        });
    }
    let instances: Vec<(String, [f64; 2], [f64; 2])> = match cfg.task_type {
        TaskType::PointNav => Vec::new(),
        TaskType::ObjectNav => {
            let cat = cfg.category.ok_or(NavError::MissingCategory(Category::Prop))?;
            let v: Vec<_> = scene
                .actors()
                .filter(|a| a.category == cat)
                .filter(|a| grid.cell_of(a.transform.location.x, a.transform.location.y).is_some())
                .filter_map(|a| {
                    let b = a.world_aabb(catalog).ok()?;
                    Some((a.name.clone(), [b.min.x, b.min.y], [b.max.x, b.max.y]))
                })
                .collect();
            if v.is_empty() {
                return Err(NavError::MissingCategory(cat));
            }
            v
        }
    };
    let (lo, hi) = cfg.bounds;
    let mut rng = seed::stream(seed, "episode");
    let mut stats = FilterStats::default();
    for _ in 0..cfg.max_tries {
        stats.tries += 1;
        let (anchor, target) = match cfg.task_type {
            TaskType::PointNav => (free[rng.random_range(0..free.len())], None),
            TaskType::ObjectNav => {
                let k = rng.random_range(0..instances.len());
                let (_, min, max) = &instances[k];
                let goal = free
                    .iter()
                    .copied()
                    .min_by(|a, b| {
                        rect_distance(grid.center(*a), *min, *max).total_cmp(&rect_distance(grid.center(*b), *min, *max))
                    })
                    .expect("free cells exist");
                (goal, Some(k))
            }
        };
        let field = DistanceField::new(grid, anchor, Some(hi))?;
        let mut reached = 0usize;
        let candidates: Vec<Cell> = field
            .reachable()
            .filter(|(c, _)| {
                reached += 1;
                *c != anchor
            })
            .filter(|(_, m)| {
                let l = m.length(grid.cell_size);
                l >= lo && l <= hi
            })
            .map(|(c, _)| c)
            .collect();
        if candidates.is_empty() {
            if reached <= 1 {
                stats.unreachable += 1;
            } else {
                stats.length += 1;
            }
            continue;
        }
        let other = candidates[rng.random_range(0..candidates.len())];
        let (start, goal_cell) = match cfg.task_type {
            TaskType::PointNav => (anchor, other),
            TaskType::ObjectNav => (other, anchor),
        };
        let path = shortest_path(grid, start, goal_cell)?;
        let goal = match target {
            None => Goal::Point { position: grid.center(goal_cell) },
            Some(k) => {
                let (name, min, max) = &instances[k];
                let centre = [(min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0];
                let own = grid.rect_cells(*min, *max);
                if !path.waypoints.iter().any(|w| line_of_sight(grid, *w, centre, &own)) {
                    stats.no_line_of_sight += 1;
                    continue;
                }
                Goal::Object {
                    category: cfg.category.expect("checked above"),
                    actor: name.clone(),
                    position: grid.center(goal_cell),
                }
            }
        };
        let s = grid.center(start);
        let offset = if cfg.heading_offset_max > 0.0 {
            rng.random_range(-cfg.heading_offset_max..=cfg.heading_offset_max)
        } else {
            0.0
        };
        let yaw = normalize_deg(bearing_deg(s, goal.position()) + offset);
        let id = match cfg.level {
            Some(l) => format!("{}L{l}-{seed}", prefix(&cfg.scene_ref)),
            None => format!("{}{seed}", prefix(&cfg.scene_ref)),
        };
        return Ok(Episode {
            id,
            scene_ref: cfg.scene_ref.clone(),
            task_type: cfg.task_type,
            start: Pose {
                position: Vec3::new(s[0], s[1], grid.origin.z),
                yaw,
            },
            goal,
            reference_path: path.waypoints,
            l_star: path.length,
            d0: path.length,
            level: cfg.level,
            seed,
        });
    }
    Err(NavError::SamplingFailure {
        tries: stats.tries,
        stats,
    })
}

fn prefix(scene_ref: &str) -> String {
    if scene_ref.is_empty() {
        "ep-".to_string()
    } else {
        format!("{scene_ref}-")
    }
}

/// How episodes sampled on an augmented scene draw their start yaw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartYawPolicy {
    pub heading_offset_max: f64,
}

#[derive(Clone, Debug)]
pub struct Augmented {
    pub scene: SceneGraph,
    pub grid: OccupancyGrid,
    pub yaw_policy: StartYawPolicy,
    pub added: Vec<String>,
    /// Newly occupied fraction of the originally walkable cells.
    pub density: f64,
}

/// Obstacle footprints in cells per side, largest first.
const OBSTACLES: [(&str, usize); 3] = [("crate", 4), ("crate_small", 2), ("road_cone", 1)];

/// Scatters prop obstacles on free cells until the level's density is met to
/// within one cell, keeping the walkable area mostly in one piece.
pub fn apply_difficulty(
    scene: &SceneGraph,
    catalog: &AssetCatalog,
    grid: &OccupancyGrid,
    level: &DifficultyLevel,
    seed: u64,
) -> Result<Augmented, NavError> {
    let walkable = grid.free_count();
    let target = (level.obstacle_density * walkable as f64).round() as usize;
    let yaw_policy = StartYawPolicy {
        heading_offset_max: level.heading_offset_max,
    };
    if target == 0 {
        return Ok(Augmented {
            scene: scene.clone(),
            grid: grid.clone(),
            yaw_policy,
            added: Vec::new(),
            density: 0.0,
        });
    }
    for (asset, _) in OBSTACLES {
        catalog.require(asset).map_err(|e| NavError::Scene(e.to_string()))?;
    }
    let c = grid.cell_size;
    for attempt in 0..MAX_RESAMPLES {
        let mut rng = seed::stream(seed, &format!("obstacles/{attempt}"));
        let mut g = grid.clone();
        let mut s = scene.clone();
        let mut cells: Vec<Cell> = g.free_cells().collect();
        cells.shuffle(&mut rng);
        let mut added = Vec::new();
        let mut filled = 0usize;
        for &(ix, iy) in &cells {
            if filled >= target {
                break;
            }
            let remaining = target - filled;
            let roll: f64 = rng.random();
            let first = if roll < 0.6 { 0 } else if roll < 0.9 { 1 } else { 2 };
            for &(asset, k) in &OBSTACLES[first..] {
                if k * k > remaining || ix + k > g.width || iy + k > g.height {
                    continue;
                }
                if !(0..k).all(|dy| (0..k).all(|dx| g.is_free((ix + dx, iy + dy)))) {
                    continue;
                }
                let desc = catalog.require(asset).map_err(|e| NavError::Scene(e.to_string()))?;
                let x = g.origin.x + (ix as f64 + k as f64 / 2.0) * c;
                let y = g.origin.y + (iy as f64 + k as f64 / 2.0) * c;
                // Scale the box to exactly cover its k×k cells.
                let sx = k as f64 * c / (2.0 * desc.base_extent.x);
                let sy = k as f64 * c / (2.0 * desc.base_extent.y);
                let name = format!("Dyn_{:04}", added.len());
                let t = Transform::at(Vec3::new(x, y, s.ground_z + desc.base_extent.z)).with_scale(Vec3::new(sx, sy, 1.0));
                s.spawn_actor(catalog, &name, asset, t).map_err(|e| NavError::Scene(e.to_string()))?;
                let half = k as f64 * c / 2.0;
                filled += g.fill_rect([x - half, y - half], [x + half, y + half]);
                added.push(name);
                break;
            }
        }
        let (_, sizes) = g.components();
        let largest = sizes.iter().copied().max().unwrap_or(0);
        if filled.abs_diff(target) <= 1 && 2 * largest >= g.free_count() {
            return Ok(Augmented {
                density: filled as f64 / walkable as f64,
                scene: s,
                grid: g,
                yaw_policy,
                added,
            });
        }
    }
    Err(NavError::DensityUnreachable {
        target: level.obstacle_density,
        attempts: MAX_RESAMPLES,
    })
}

/// Rebuilds the grid for an augmented scene over the same window; equals the
/// incrementally updated grid returned by [`apply_difficulty`].
pub fn rebuild_like(grid: &OccupancyGrid, scene: &SceneGraph, catalog: &AssetCatalog) -> Result<OccupancyGrid, NavError> {
    let min = [grid.origin.x, grid.origin.y];
    let max = [
        grid.origin.x + grid.width as f64 * grid.cell_size,
        grid.origin.y + grid.height as f64 * grid.cell_size,
    ];
    build_grid_region(scene, catalog, grid.cell_size, min, max)
}
