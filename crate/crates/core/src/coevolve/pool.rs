use std::path::Path;
use std::sync::{Arc, OnceLock};

use crate::builder::{generate_scene, Archetype, BuildError, GenContext, GenerationSpec};
use crate::env::SemanticMap;
use crate::nav::{apply_difficulty, build_grid_region, difficulty_level, NavError, OccupancyGrid, LEVELS};
use crate::scene::{AssetCatalog, SceneGraph};
use crate::skills::SkillIndex;
use crate::seed;

/// Side of the square navigation window cut from each scene, cm.
pub const DEFAULT_WINDOW_CM: f64 = 5000.0;
/// Scene seeds tried per pool slot before giving up.
pub const SCENE_ATTEMPTS: usize = 4;

/// A scene at one difficulty level: obstacles added, grid and semantic map built.
#[derive(Debug)]
pub struct LevelWorld {
    pub scene: SceneGraph,
    pub grid: Arc<OccupancyGrid>,
    pub map: Arc<SemanticMap>,
    pub density: f64,
}

#[derive(Debug)]
pub struct PoolScene {
    pub name: String,
    pub archetype: Archetype,
    pub scene: SceneGraph,
    pub grid: OccupancyGrid,
    seed: u64,
    levels: [OnceLock<Result<Arc<LevelWorld>, String>>; 8],
}

impl PoolScene {
    pub fn new(name: impl Into<String>, archetype: Archetype, scene: SceneGraph, grid: OccupancyGrid, seed: u64) -> Self {
        Self {
            name: name.into(),
            archetype,
            scene,
            grid,
            seed,
            levels: Default::default(),
        }
    }

    /// Built on first use and cached; the obstacle layout depends only on the
    /// scene seed and the level.
    pub fn level(&self, catalog: &AssetCatalog, level: usize) -> Result<Arc<LevelWorld>, NavError> {
        let lvl = difficulty_level(level)?;
        self.levels[level]
            .get_or_init(|| {
                let build = || -> Result<LevelWorld, NavError> {
                    let aug = apply_difficulty(
                        &self.scene,
                        catalog,
                        &self.grid,
                        lvl,
                        seed::derive_u64(self.seed, &format!("level/{level}")),
                    )?;
                    let grid = Arc::new(aug.grid);
                    let map = Arc::new(SemanticMap::new(&aug.scene, catalog, grid.clone())?);
                    Ok(LevelWorld {
                        scene: aug.scene,
                        grid,
                        map,
                        density: aug.density,
                    })
                };
                build().map(Arc::new).map_err(|e| e.to_string())
            })
            .clone()
            .map_err(NavError::Scene)
    }
}

/// Training and held-out scenes for a curriculum run.
#[derive(Debug)]
pub struct ScenePool {
    pub catalog: Arc<AssetCatalog>,
    pub train: Vec<PoolScene>,
    pub heldout: Vec<PoolScene>,
}

fn make_scene(
    catalog: &Arc<AssetCatalog>,
    work: &Path,
    archetype: Archetype,
    seed: u64,
    window: f64,
    name: String,
) -> Result<PoolScene, BuildError> {
    let skills_dir = work.join("skills");
    std::fs::create_dir_all(&skills_dir)?;
    let skills = SkillIndex::load(&skills_dir)?;
    let mut ctx = GenContext::new(catalog.clone(), skills, work);
    let out = generate_scene(&GenerationSpec::new(archetype, seed), &mut ctx)?;
    let h = window / 2.0;
    let grid = build_grid_region(&out.scene, catalog, crate::nav::DEFAULT_CELL_SIZE, [-h, -h], [h, h])
        .map_err(|e| BuildError::InvalidSpec(e.to_string()))?;
    Ok(PoolScene::new(name, archetype, out.scene, grid, seed))
}

impl ScenePool {
    /// Generates `n_train` training scenes and `n_heldout` held-out scenes,
    /// cycling through the archetypes with seeds drawn from disjoint ranges.
    pub fn generate(
        catalog: Arc<AssetCatalog>,
        seed: u64,
        n_train: usize,
        n_heldout: usize,
        window: f64,
        work: &Path,
    ) -> Result<Self, BuildError> {
        use rayon::prelude::*;
        let jobs: Vec<(bool, usize)> = (0..n_train).map(|i| (false, i)).chain((0..n_heldout).map(|i| (true, i))).collect();
        let built: Vec<Result<(bool, PoolScene), BuildError>> = jobs
            .par_iter()
            .map(|&(held, i)| {
                let arch = Archetype::ALL[(i + held as usize * 2) % Archetype::ALL.len()];
                let label = if held { "heldout" } else { "train" };
                let dir = work.join(format!("{label}-{i}"));
                let mut last = None;
                for attempt in 0..SCENE_ATTEMPTS {
                    let key = if attempt == 0 { format!("{label}/{i}") } else { format!("{label}/{i}/{attempt}") };
                    let s = seed::derive_u64(seed, &key) % 1_000_000;
                    let p = make_scene(&catalog, &dir, arch, s, window, format!("{label}-{i}-{}", arch.as_str()))?;
                    // Every level has to be buildable; some layouts cannot take the
                    // densest obstacle sets without splitting the walkable area.
                    match (0..LEVELS.len()).try_for_each(|l| p.level(&catalog, l).map(|_| ())) {
                        Ok(()) => return Ok((held, p)),
                        Err(e) => last = Some(e),
                    }
                }
                Err(BuildError::InvalidSpec(format!(
                    "{label} scene {i}: no layout supports every level after {SCENE_ATTEMPTS} attempts: {}",
                    last.map_or(String::new(), |e| e.to_string())
                )))
            })
            .collect();
        let mut pool = ScenePool {
            catalog,
            train: Vec::new(),
            heldout: Vec::new(),
        };
        for r in built {
            let (held, p) = r?;
            if held {
                pool.heldout.push(p);
            } else {
                pool.train.push(p);
            }
        }
        Ok(pool)
    }

    /// Warms every level cache in parallel. Pools from `generate` are already warm.
    pub fn prepare(&self) -> Result<(), NavError> {
        use rayon::prelude::*;
        let jobs: Vec<(&PoolScene, usize)> = self
            .train
            .iter()
            .chain(&self.heldout)
            .flat_map(|s| (0..LEVELS.len()).map(move |l| (s, l)))
            .collect();
        jobs.par_iter().try_for_each(|(s, l)| s.level(&self.catalog, *l).map(|_| ()))
    }
}
