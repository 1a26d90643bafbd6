use std::collections::{BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldsmith::builder::{generate_scene, Archetype, GenContext, GenerationSpec};
use worldsmith::nav::{
    apply_difficulty, build_grid, build_grid_region, geodesic_distance, rebuild_like, sample_episode, shortest_path,
    Goal, NavError, OccupancyGrid, SampleConfig, TaskType, LEVELS,
};
use worldsmith::scene::{AssetCatalog, Category, SceneGraph};
use worldsmith::skills::SkillIndex;
use worldsmith::{Transform, Vec3};

const S2: f64 = std::f64::consts::SQRT_2;

/// Plain Dijkstra over (straight, diagonal) move counts, written without the
/// library's neighbour helper.
fn dijkstra(g: &OccupancyGrid, a: (usize, usize), b: (usize, usize)) -> Option<(u32, u32)> {
    let free = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < g.width && (y as usize) < g.height && g.is_free((x as usize, y as usize));
    let key = |s: u32, d: u32| ((s as f64 + d as f64 * S2) * 1e9) as u64;
    let mut best: HashMap<(usize, usize), (u32, u32)> = HashMap::new();
    let mut heap = BinaryHeap::new();
    best.insert(a, (0, 0));
    heap.push(Reverse((0u64, 0u32, 0u32, a)));
    while let Some(Reverse((_, s, d, c))) = heap.pop() {
        if best[&c] != (s, d) {
            continue;
        }
        if c == b {
            return Some((s, d));
        }
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (c.0 as i64 + dx, c.1 as i64 + dy);
                if !free(nx, ny) {
                    continue;
                }
                let diag = dx != 0 && dy != 0;
                if diag && !(free(c.0 as i64 + dx, c.1 as i64) && free(c.0 as i64, c.1 as i64 + dy)) {
                    continue;
                }
                let (ns, nd) = if diag { (s, d + 1) } else { (s + 1, d) };
                let n = (nx as usize, ny as usize);
                let better = best.get(&n).is_none_or(|&(os, od)| (ns as f64 + nd as f64 * S2) < (os as f64 + od as f64 * S2) - 1e-9);
                if better {
                    best.insert(n, (ns, nd));
                    heap.push(Reverse((key(ns, nd), ns, nd, n)));
                }
            }
        }
    }
    None
}

fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> OccupancyGrid {
    let mut g = OccupancyGrid::free(Vec3::zero(), 25.0, w, h).unwrap();
    for y in 0..h {
        for x in 0..w {
            if rng.random::<f64>() < p {
                g.set_occupied((x, y), true);
            }
        }
    }
    g
}

#[test]
fn astar_matches_dijkstra_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..150 {
        let p = rng.random_range(0.0..0.45);
        let g = random_grid(&mut rng, 50, 50, p);
        let free: Vec<_> = g.free_cells().collect();
        let a = free[rng.random_range(0..free.len())];
        let b = free[rng.random_range(0..free.len())];
        match (shortest_path(&g, a, b), dijkstra(&g, a, b)) {
            (Ok(path), Some((s, d))) => {
                assert_eq!((path.moves.straight, path.moves.diagonal), (s, d));
                assert_eq!(path.length, s as f64 * 25.0 + d as f64 * 25.0 * S2);
                assert_eq!(path.cells.first(), Some(&a));
                assert_eq!(path.cells.last(), Some(&b));
                for w in path.cells.windows(2) {
                    assert!(w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1);
                    assert!(g.is_free(w[1]));
                    if w[0].0 != w[1].0 && w[0].1 != w[1].1 {
                        assert!(g.is_free((w[1].0, w[0].1)) && g.is_free((w[0].0, w[1].1)), "corner cut");
                    }
                }
            }
            (Err(NavError::Unreachable { .. }), None) => {}
            (x, y) => panic!("{x:?} vs {y:?}"),
        }
    }
}

#[test]
fn path_basics() {
    let g = OccupancyGrid::from_ascii(&["............"], 25.0).unwrap();
    let p = shortest_path(&g, (3, 0), (3, 0)).unwrap();
    assert_eq!((p.length, p.cells.len()), (0.0, 1));
    let p = shortest_path(&g, (0, 0), (10, 0)).unwrap();
    assert_eq!(p.length, 250.0);
    assert_eq!(p.waypoints[0], [12.5, 12.5]);
    // The only gap is diagonal: no corner cutting makes it a wall.
    let g = OccupancyGrid::from_ascii(&["..#", ".#.", "#.."], 25.0).unwrap();
    assert!(matches!(shortest_path(&g, (0, 2), (2, 0)), Err(NavError::Unreachable { .. })));
    assert!(matches!(shortest_path(&g, (0, 0), (2, 0)), Err(NavError::BlockedEndpoint(_))));
    let g = OccupancyGrid::from_ascii(&["...", "...", "..."], 25.0).unwrap();
    assert_eq!(shortest_path(&g, (0, 0), (2, 2)).unwrap().length, 50.0 * S2);
    assert_eq!(geodesic_distance(&g, [12.5, 12.5], [37.5, 12.5]).unwrap(), 25.0);
    assert_eq!(geodesic_distance(&g, [12.5, 12.5], [20.0, 5.0]).unwrap(), 0.0);
}

#[test]
fn geodesic_distance_snaps_blocked_goal() {
    let g = OccupancyGrid::from_ascii(&["....#"], 25.0).unwrap();
    assert_eq!(geodesic_distance(&g, [12.5, 12.5], [112.5, 12.5]).unwrap(), 75.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]
    #[test]
    fn geodesic_obeys_triangle_inequality(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grid(&mut rng, 20, 20, 0.25);
        let free: Vec<_> = g.free_cells().collect();
        prop_assume!(free.len() >= 3);
        let pick = |r: &mut ChaCha8Rng| g.center(free[r.random_range(0..free.len())]);
        let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        if let (Ok(ab), Ok(bc), Ok(ac)) = (geodesic_distance(&g, a, b), geodesic_distance(&g, b, c), geodesic_distance(&g, a, c)) {
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert_eq!(ab, geodesic_distance(&g, b, a).unwrap());
        }
    }
}

fn catalog() -> Arc<AssetCatalog> {
    Arc::new(AssetCatalog::builtin())
}

fn empty_scene(size: f64) -> SceneGraph {
    SceneGraph::with_ground(size, "noon").unwrap()
}

#[test]
fn empty_scene_is_all_free() {
    let g = build_grid(&empty_scene(2000.0), &catalog(), 25.0).unwrap();
    assert_eq!((g.width, g.height), (80, 80));
    assert_eq!(g.free_count(), 6400);
    assert!(matches!(build_grid(&empty_scene(2000.0), &catalog(), 0.0), Err(NavError::InvalidCellSize(_))));
}

#[test]
fn two_metre_building_fills_an_eight_by_eight_block() {
    let cat = catalog();
    let mut s = empty_scene(2000.0);
    let t = Transform::at(Vec3::new(100.0, 100.0, 1200.0)).with_scale(Vec3::new(100.0 / 600.0, 100.0 / 500.0, 1.0));
    s.spawn_actor(&cat, "B", "building_01", t).unwrap();
    let g = build_grid(&s, &cat, 25.0).unwrap();
    assert_eq!(g.occupied_count(), 64);
    for iy in 0..80 {
        for ix in 0..80 {
            let inside = (40..48).contains(&ix) && (40..48).contains(&iy);
            assert_eq!(!g.is_free((ix, iy)), inside, "{ix},{iy}");
        }
    }
}

fn random_scene(rng: &mut ChaCha8Rng, cat: &AssetCatalog, n: usize) -> SceneGraph {
    let mut s = empty_scene(2000.0);
    let assets: Vec<_> = cat.list(None).into_iter().map(|a| a.asset_id.clone()).collect();
    for i in 0..n {
        let id = &assets[rng.random_range(0..assets.len())];
        let t = Transform::at(Vec3::new(rng.random_range(-1100.0..1100.0), rng.random_range(-1100.0..1100.0), 0.0))
            .with_yaw(rng.random_range(-180.0..180.0))
            .with_scale(Vec3::splat(rng.random_range(0.1..0.5)));
        s.spawn_actor(cat, &format!("A{i}"), id, t).unwrap();
    }
    s
}

#[test]
fn rasterization_matches_brute_force() {
    let cat = catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let s = random_scene(&mut rng, &cat, 12);
        let g = build_grid(&s, &cat, 25.0).unwrap();
        let boxes: Vec<_> = s
            .actors()
            .filter(|a| a.category != Category::Road)
            .map(|a| a.world_aabb(&cat).unwrap())
            .collect();
        for iy in 0..g.height {
            for ix in 0..g.width {
                let (x0, y0) = (-1000.0 + ix as f64 * 25.0, -1000.0 + iy as f64 * 25.0);
                let hit = boxes.iter().any(|b| x0 < b.max.x && x0 + 25.0 > b.min.x && y0 < b.max.y && y0 + 25.0 > b.min.y);
                assert_eq!(!g.is_free((ix, iy)), hit, "cell {ix},{iy}");
            }
        }
    }
}

#[test]
fn refinement_stays_within_one_coarse_ring() {
    let cat = catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let s = random_scene(&mut rng, &cat, 10);
        let coarse = build_grid(&s, &cat, 50.0).unwrap();
        let fine = build_grid(&s, &cat, 25.0).unwrap();
        let near_coarse = |x: f64, y: f64| {
            let c = coarse.cell_of(x, y).unwrap();
            (-1i64..=1).any(|dx| (-1i64..=1).any(|dy| {
                let (nx, ny) = (c.0 as i64 + dx, c.1 as i64 + dy);
                coarse.contains(nx, ny) && !coarse.is_free((nx as usize, ny as usize))
            }))
        };
        for i in 0..fine.len() {
            let c = fine.cell_at(i);
            let [x, y] = fine.center(c);
            if !fine.is_free(c) {
                assert!(near_coarse(x, y));
            }
            let cc = coarse.cell_of(x, y).unwrap();
            if !coarse.is_free(cc) {
                // Every occupied coarse cell has an occupied fine cell within one coarse ring.
                let [cx, cy] = coarse.center(cc);
                assert!((0..fine.len()).any(|j| {
                    let f = fine.center(fine.cell_at(j));
                    !fine.is_free(fine.cell_at(j)) && (f[0] - cx).abs() <= 75.0 && (f[1] - cy).abs() <= 75.0
                }));
            }
        }
    }
}

/// A generated residential block and a 50 m window around its crossing.
fn city() -> &'static (SceneGraph, OccupancyGrid) {
    static CITY: OnceLock<(SceneGraph, OccupancyGrid)> = OnceLock::new();
    CITY.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(tmp.path().join("s")).unwrap();
        let mut ctx = GenContext::new(catalog(), SkillIndex::load(tmp.path().join("s")).unwrap(), tmp.path());
        let out = generate_scene(&GenerationSpec::new(Archetype::Residential, 7), &mut ctx).unwrap();
        let g = build_grid_region(&out.scene, &catalog(), 25.0, [-2500.0, -2500.0], [2500.0, 2500.0]).unwrap();
        (out.scene, g)
    })
}

#[test]
fn default_episodes_respect_bounds_and_replay() {
    let (scene, grid) = city();
    let cat = catalog();
    for seed in 0..40 {
        let e = sample_episode(grid, scene, &cat, &SampleConfig::default(), seed).unwrap();
        assert!((300.0..=2000.0).contains(&e.l_star), "{}", e.l_star);
        assert_eq!(e.d0, e.l_star);
        let start = grid.cell_of(e.start.position.x, e.start.position.y).unwrap();
        let goal = grid.cell_of(e.goal.position()[0], e.goal.position()[1]).unwrap();
        let again = shortest_path(grid, start, goal).unwrap();
        assert_eq!(again.length, e.l_star);
        assert_eq!(e.reference_path.first(), Some(&grid.center(start)));
        assert_eq!(e.reference_path.last(), Some(&grid.center(goal)));
        assert_eq!(e, sample_episode(grid, scene, &cat, &SampleConfig::default(), seed).unwrap());
    }
}

#[test]
fn object_nav_goals_are_visible_and_adjacent() {
    let (scene, grid) = city();
    let cat = catalog();
    let cfg = SampleConfig {
        task_type: TaskType::ObjectNav,
        category: Some(Category::StreetFurniture),
        ..SampleConfig::default()
    };
    for seed in 0..10 {
        let e = sample_episode(grid, scene, &cat, &cfg, seed).unwrap();
        let Goal::Object { category, actor, position } = &e.goal else { panic!() };
        assert_eq!(*category, Category::StreetFurniture);
        let b = scene.actor(actor).unwrap().world_aabb(&cat).unwrap();
        let dx = (b.min.x - position[0]).max(position[0] - b.max.x).max(0.0);
        let dy = (b.min.y - position[1]).max(position[1] - b.max.y).max(0.0);
        assert!((dx * dx + dy * dy).sqrt() <= 25.0 * S2, "goal not next to its instance");
    }
    let none = SampleConfig {
        category: Some(Category::Container),
        ..cfg
    };
    assert!(matches!(sample_episode(grid, scene, &cat, &none, 0), Err(NavError::MissingCategory(Category::Container))));
}

#[test]
fn single_free_cell_fails_sampling() {
    let g = OccupancyGrid::from_ascii(&["##", "#."], 25.0).unwrap();
    let s = empty_scene(2000.0);
    assert!(matches!(sample_episode(&g, &s, &catalog(), &SampleConfig::default(), 1), Err(NavError::SamplingFailure { .. })));
    let g = OccupancyGrid::from_ascii(&["....", "...."], 25.0).unwrap();
    match sample_episode(&g, &s, &catalog(), &SampleConfig::default(), 1) {
        Err(NavError::SamplingFailure { stats, .. }) => assert_eq!(stats.length, stats.tries),
        other => panic!("{other:?}"),
    }
}

#[test]
fn difficulty_levels_hit_their_density_and_bounds() {
    let (scene, grid) = city();
    let cat = catalog();
    let walk = grid.free_count() as f64;
    let aug = apply_difficulty(scene, &cat, grid, &LEVELS[0], 1).unwrap();
    assert!(aug.added.is_empty());
    assert_eq!(aug.grid, *grid);
    for lvl in [&LEVELS[3], &LEVELS[7]] {
        let aug = apply_difficulty(scene, &cat, grid, lvl, 2).unwrap();
        let measured = (grid.free_count() - aug.grid.free_count()) as f64;
        assert!((measured - lvl.obstacle_density * walk).abs() <= 1.0, "{measured} vs {}", lvl.obstacle_density * walk);
        assert_eq!(rebuild_like(grid, &aug.scene, &cat).unwrap(), aug.grid);
        assert_eq!(aug.yaw_policy.heading_offset_max, lvl.heading_offset_max);
        let cfg = SampleConfig::for_level(lvl);
        for seed in 0..10 {
            let e = sample_episode(&aug.grid, &aug.scene, &cat, &cfg, seed).unwrap();
            assert!(e.l_star >= lvl.path_len_range.0 && e.l_star <= lvl.path_len_range.1);
            assert_eq!(e.level, Some(lvl.index));
            let bearing = (e.goal.position()[1] - e.start.position.y).atan2(e.goal.position()[0] - e.start.position.x).to_degrees();
            let off = worldsmith::geom::normalize_deg(e.start.yaw - bearing).abs();
            assert!(off <= lvl.heading_offset_max + 1e-9);
        }
    }
}

#[test]
fn episodes_round_trip_as_jsonl() {
    let (scene, grid) = city();
    let eps: Vec<_> = (0..3).map(|s| sample_episode(grid, scene, &catalog(), &SampleConfig::default(), s).unwrap()).collect();
    let mut buf = Vec::new();
    worldsmith::nav::write_episodes(&mut buf, &eps).unwrap();
    assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 3);
    assert_eq!(worldsmith::nav::read_episodes(&buf[..]).unwrap(), eps);
}
