use std::sync::Arc;

use proptest::prelude::*;
use worldsmith::env::{codes, compute_reward, Action, EnvConfig, EnvError, EnvHandler, NavEnv};
use worldsmith::nav::{build_grid, sample_episode, Episode, Goal, OccupancyGrid, Pose, SampleConfig, TaskType, LEVELS};
use worldsmith::scene::{AssetCatalog, SceneGraph};
use worldsmith::server::{serve_connection, ToolRequest, ToolResponse};
use worldsmith::{Transform, Vec3};

fn catalog() -> AssetCatalog {
    AssetCatalog::builtin()
}

/// 40 m square with one 2 m wide wall block east of the origin.
fn walled() -> (SceneGraph, Arc<OccupancyGrid>) {
    let cat = catalog();
    let mut s = SceneGraph::with_ground(4000.0, "noon").unwrap();
    let t = Transform::at(Vec3::new(300.0, 0.0, 1200.0)).with_scale(Vec3::new(100.0 / 600.0, 400.0 / 500.0, 1.0));
    s.spawn_actor(&cat, "Wall", "building_01", t).unwrap();
    let g = build_grid(&s, &cat, 25.0).unwrap();
    (s, Arc::new(g))
}

fn env(scene: &SceneGraph, grid: &Arc<OccupancyGrid>, max_steps: usize) -> NavEnv {
    NavEnv::from_scene(scene, &catalog(), grid.clone(), EnvConfig { max_steps, ..EnvConfig::default() }).unwrap()
}

fn episode(start: [f64; 2], yaw: f64, goal: [f64; 2], d0: f64) -> Episode {
    Episode {
        id: "t".into(),
        scene_ref: "walled".into(),
        task_type: TaskType::PointNav,
        start: Pose { position: Vec3::new(start[0], start[1], 0.0), yaw },
        goal: Goal::Point { position: goal },
        reference_path: vec![start, goal],
        l_star: d0,
        d0,
        level: None,
        seed: 0,
    }
}

#[test]
fn stop_near_goal_succeeds() {
    let (s, g) = walled();
    let mut e = env(&s, &g, 40);
    e.reset(&episode([-987.5, -987.5], 0.0, [-937.5, -987.5], 50.0), 0).unwrap();
    let r = e.step(Action::Stop).unwrap();
    assert!(r.terminated && !r.truncated && r.info.success);
    assert_eq!(r.info.d, 0.5);
    assert_eq!(r.reward, 1.0 - 0.01);
    assert!(matches!(e.step(Action::MoveForward), Err(EnvError::Finished)));
    // Exactly at the threshold is not a success.
    e.reset(&episode([-987.5, -987.5], 0.0, [-887.5, -987.5], 100.0), 0).unwrap();
    let r = e.step(Action::Stop).unwrap();
    assert!(!r.info.success);
    assert_eq!(r.reward, -0.01);
}

#[test]
fn turning_closes_after_24_steps() {
    let (s, g) = walled();
    let mut e = env(&s, &g, 40);
    e.reset(&episode([-987.5, -987.5], 30.0, [0.0, -987.5], 1000.0), 0).unwrap();
    for i in 0..24 {
        let r = e.step(Action::TurnLeft).unwrap();
        assert_eq!(r.reward, -0.01);
        assert_eq!(r.observation.step_count, i + 1);
    }
    assert_eq!(e.pose().unwrap().yaw, 30.0);
    for _ in 0..3 {
        e.step(Action::TurnRight).unwrap();
    }
    assert_eq!(e.pose().unwrap().yaw, -15.0);
}

#[test]
fn walking_into_a_wall_is_blocked() {
    let (s, g) = walled();
    let mut e = env(&s, &g, 40);
    // Wall spans x in [200, 400]; start one cell west of it, facing east.
    e.reset(&episode([187.5, 12.5], 0.0, [-500.0, 12.5], 700.0), 0).unwrap();
    let before = e.pose().unwrap();
    let r = e.step(Action::MoveForward).unwrap();
    assert!(r.info.collision);
    assert_eq!(e.pose().unwrap(), before);
    assert_eq!(r.observation.step_count, 1);
    let r = e.step(Action::TurnLeft).unwrap();
    assert!(!r.info.collision);
}

#[test]
fn bearing_signs() {
    let (s, g) = walled();
    let mut e = env(&s, &g, 40);
    let o = e.reset(&episode([-987.5, -987.5], 0.0, [-487.5, -987.5], 500.0), 0).unwrap();
    assert_eq!(o.bearing, 0.0);
    assert_eq!(o.distance, 5.0);
    // Facing +X, the goal at +Y is on the left.
    let o = e.reset(&episode([-987.5, -987.5], 0.0, [-987.5, -487.5], 500.0), 0).unwrap();
    assert_eq!(o.bearing, -90.0);
    let o = e.reset(&episode([-987.5, -987.5], 0.0, [-987.5, -1487.5], 500.0), 0).unwrap();
    assert_eq!(o.bearing, 90.0);
}

#[test]
fn empty_scene_raster_is_uniform() {
    let cat = catalog();
    let s = SceneGraph::with_ground(19000.0, "noon").unwrap();
    let g = Arc::new(build_grid(&s, &cat, 25.0).unwrap());
    let mut e = env(&s, &g, 40);
    let o = e.reset(&episode([12.5, 12.5], 37.0, [5012.5, 5012.5], 7000.0), 0).unwrap();
    assert_eq!((o.ego_raster.width, o.ego_raster.height), (224, 224));
    assert_eq!(o.ego_raster.count(codes::FREE), 224 * 224);
}

#[test]
fn raster_is_heading_up() {
    let (s, g) = walled();
    let mut e = env(&s, &g, 40);
    // Facing the wall from the west: it should appear above the centre.
    let o = e.reset(&episode([137.5, 12.5], 0.0, [-500.0, 12.5], 700.0), 0).unwrap();
    assert_eq!(o.ego_raster.get(111, 111), codes::FREE);
    assert_eq!(o.ego_raster.get(111, 111 - 4), codes::BUILDING);
    // Facing north, the wall is to the right.
    let o = e.reset(&episode([137.5, 12.5], 90.0, [-500.0, 12.5], 700.0), 0).unwrap();
    assert_eq!(o.ego_raster.get(111 + 4, 111), codes::BUILDING);
    assert_eq!(o.ego_raster.get(111 - 4, 111), codes::FREE);
}

#[test]
fn truncation_fires_exactly_at_budget() {
    let (s, g) = walled();
    let mut e = env(&s, &g, 5);
    assert!(matches!(e.step(Action::TurnLeft), Err(EnvError::NotReset)));
    e.reset(&episode([-987.5, -987.5], 0.0, [0.0, -987.5], 1000.0), 0).unwrap();
    for i in 1..=5 {
        let r = e.step(Action::TurnLeft).unwrap();
        assert_eq!(r.truncated, i == 5);
    }
    assert!(matches!(e.step(Action::TurnLeft), Err(EnvError::Finished)));
    e.reset(&episode([-987.5, -987.5], 0.0, [0.0, -987.5], 1000.0), 0).unwrap();
    for _ in 0..4 {
        e.step(Action::TurnLeft).unwrap();
    }
    let r = e.step(Action::Stop).unwrap();
    assert!(r.terminated && r.truncated);
}

#[test]
fn rewards_telescope_along_the_reference_path() {
    let (s, g) = walled();
    let mut e = env(&s, &g, 40);
    let l = 20.0 * 25.0;
    e.reset(&episode([-987.5, -987.5], 0.0, [-987.5 + l, -987.5], l), 0).unwrap();
    let mut total = 0.0;
    for _ in 0..20 {
        total += e.step(Action::MoveForward).unwrap().reward;
    }
    let r = e.step(Action::Stop).unwrap();
    total += r.reward;
    assert!(r.info.success);
    assert!((total - (1.0 + 1.0 - 0.01 * 21.0)).abs() < 1e-12, "{total}");
    assert_eq!(compute_reward(3.0, 3.0, 10.0, false), -0.01);
    assert_eq!(compute_reward(3.0, 3.0, 10.0, true), 0.99);
}

#[test]
fn reset_is_deterministic_and_starts_at_l_star() {
    let (s, g) = walled();
    let cat = catalog();
    let cfg = SampleConfig { heading_offset_max: LEVELS[7].heading_offset_max, ..SampleConfig::default() };
    let mut e = env(&s, &g, 40);
    let mut big_offsets = 0;
    for seed in 0..30 {
        let ep = sample_episode(&g, &s, &cat, &cfg, seed).unwrap();
        let a = e.reset(&ep, 1).unwrap();
        let b = e.reset(&ep, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.distance, ep.l_star / 100.0);
        assert!(a.bearing.abs() <= 180.0);
        if a.bearing.abs() > 90.0 {
            big_offsets += 1;
        }
    }
    assert!(big_offsets > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn agent_never_enters_occupied_cells(seed in any::<u64>(), actions in proptest::collection::vec(0usize..3, 1..120)) {
        let (s, g) = walled();
        let ep = sample_episode(&g, &s, &catalog(), &SampleConfig::default(), seed).unwrap();
        let mut e = env(&s, &g, 500);
        e.reset(&ep, seed).unwrap();
        let mut prev_d = ep.d0;
        let mut progress = 0.0;
        for a in actions {
            let r = e.step(Action::ALL[a]).unwrap();
            let p = e.pose().unwrap();
            let c = g.cell_of(p.position.x, p.position.y).unwrap();
            prop_assert!(g.is_free(c));
            progress += (prev_d - r.info.d * 100.0) / ep.d0;
            prev_d = r.info.d * 100.0;
        }
        prop_assert!((progress - (ep.d0 - prev_d) / ep.d0).abs() < 1e-9);
    }
}

#[test]
fn replays_hash_identically() {
    let (s, g) = walled();
    let cat = catalog();
    let mut e = env(&s, &g, 60);
    let ep = sample_episode(&g, &s, &cat, &SampleConfig::default(), 3).unwrap();
    let actions: Vec<Action> = (0..60).map(|i| Action::ALL[(i * 7 + i / 3) % 3]).collect();
    let mut hashes = Vec::new();
    for _ in 0..3 {
        e.reset(&ep, 9).unwrap();
        for a in &actions {
            if e.step(*a).unwrap().truncated {
                break;
            }
        }
        hashes.push(e.log_hash());
    }
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(e.log().len(), 61);
}

#[test]
fn env_is_servable_over_the_wire() {
    let (s, g) = walled();
    let ep = episode([-987.5, -987.5], 0.0, [-937.5, -987.5], 50.0);
    let mut h = EnvHandler::new(env(&s, &g, 40));
    let lines = [
        serde_json::to_string(&ToolRequest::new(1, "step", serde_json::json!({"action": "stop"}))).unwrap(),
        serde_json::to_string(&ToolRequest::new(2, "reset", serde_json::json!({"episode": ep}))).unwrap(),
        serde_json::to_string(&ToolRequest::new(3, "step", serde_json::json!({"action": "fly"}))).unwrap(),
        serde_json::to_string(&ToolRequest::new(4, "step", serde_json::json!({"action": "stop"}))).unwrap(),
    ]
    .join("\n");
    let mut out = Vec::new();
    serve_connection(lines.as_bytes(), &mut out, &mut h).unwrap();
    let resp: Vec<ToolResponse> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(resp.len(), 4);
    assert_eq!(resp[0].error.as_ref().unwrap().code, "not_initialized");
    let obs = &resp[1].payload.as_ref().unwrap()["observation"];
    assert_eq!(obs["distance"], 0.5);
    assert_eq!(obs["ego_raster"]["width"], 224);
    assert_eq!(resp[2].error.as_ref().unwrap().code, "bad_args");
    let p = resp[3].payload.as_ref().unwrap();
    assert_eq!(p["info"]["success"], true);
    assert_eq!(p["terminated"], true);
}
