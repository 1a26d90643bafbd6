use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;
use worldsmith::builder::{
    acquire_context, construct, generate_scene, plan_layout, replay_trace, verify_semantic, Archetype, BuildError,
    BuildPlan, Driver, GenContext, GenerationSpec, Placement, PlacementBatch, RevisionAction, TraceRecord,
    MAX_VERIFY_ROUNDS,
};
use worldsmith::scene::{AssetCatalog, Category, SceneGraph};
use worldsmith::server::Session;
use worldsmith::skills::SkillIndex;
use worldsmith::verify::{
    self, CheckFilter, Issue, Judge, JudgeError, JudgeRegistry, JudgeRequest, Verdict, VerdictStatus,
};
use worldsmith::{Transform, Vec3};

fn catalog() -> Arc<AssetCatalog> {
    Arc::new(AssetCatalog::builtin())
}

fn ctx(dir: &std::path::Path) -> GenContext {
    std::fs::create_dir_all(dir.join("skills")).unwrap();
    let skills = SkillIndex::load(dir.join("skills")).unwrap();
    GenContext::new(catalog(), skills, dir.join("out"))
}

fn spacing() -> BTreeMap<Category, f64> {
    let tmp = tempfile::tempdir().unwrap();
    SkillIndex::load(tmp.path()).unwrap().spacing_table()
}

fn fresh_driver(dir: &std::path::Path) -> Driver {
    let mut d = Driver::new(Session::new(catalog(), dir));
    d.call("test", "setup_environment", json!({})).unwrap();
    d
}

fn place(name: &str, asset: &str, x: f64, y: f64, z: f64) -> Placement {
    Placement {
        name: name.into(),
        asset_id: asset.into(),
        transform: Transform::at(Vec3::new(x, y, z)),
    }
}

fn validity(scene: &SceneGraph, cat: &AssetCatalog) -> (f64, f64, f64) {
    let all = CheckFilter::default();
    let col = verify::check_collisions(scene, cat, &all, 0.0).unwrap();
    let grav = verify::score_gravity(scene, cat).unwrap();
    let oob = verify::check_bounds(scene, cat, scene.ground_half_extent).unwrap();
    (col.collision_free_rate, grav, oob.in_bounds_rate)
}

#[test]
fn every_archetype_builds_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ctx(tmp.path());
    for a in Archetype::ALL {
        let out = generate_scene(&GenerationSpec::new(a, 11), &mut c).unwrap();
        let (col, grav, oob) = validity(&out.scene, &c.catalog);
        assert!(col >= 0.98 && grav == 1.0 && oob == 1.0, "{a:?}: {col} {grav} {oob}");
        assert_eq!(out.verdict.status, VerdictStatus::Pass, "{a:?}: {:?}", out.verdict.issues);
        assert_eq!(out.rounds, 1);
    }
}

#[test]
fn residential_seed_7_is_collision_free() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ctx(tmp.path());
    let out = generate_scene(&GenerationSpec::new(Archetype::Residential, 7), &mut c).unwrap();
    let (col, _, _) = validity(&out.scene, &c.catalog);
    assert!(col >= 0.98);
}

#[test]
fn acquire_context_sets_up_once() {
    let tmp = tempfile::tempdir().unwrap();
    let c = ctx(tmp.path());
    let mut d = Driver::new(c.session());
    let spec = GenerationSpec::new(Archetype::DowntownIntersection, 1);
    let bundle = acquire_context(&mut d, &c.skills, &spec).unwrap();
    assert!(d.session().scene().is_initialized());
    assert_eq!(d.session().scene().env_settings.as_ref().unwrap().time_of_day, "noon");
    assert_eq!(bundle.asset_count, c.catalog.list(None).len());
    assert!(bundle.skills.iter().any(|s| s == "city-layout"), "{:?}", bundle.skills);
    let err = acquire_context(&mut d, &c.skills, &spec).unwrap_err();
    assert!(matches!(err, BuildError::Tool { ref code, .. } if code == "already_initialized"), "{err}");
}

fn roads(plan: &BuildPlan) -> &PlacementBatch {
    plan.batches.iter().find(|b| b.label == "roads").unwrap()
}

#[test]
fn downtown_has_a_four_way_cross() {
    let spec = GenerationSpec::new(Archetype::DowntownIntersection, 3);
    let plan = plan_layout(&spec, &catalog(), &spacing()).unwrap();
    let r = roads(&plan);
    let crossings: Vec<&Placement> = r.placements.iter().filter(|p| p.asset_id == "road_intersection").collect();
    assert_eq!(crossings.len(), 1);
    let (cx, cy) = (crossings[0].transform.location.x, crossings[0].transform.location.y);
    let straight: Vec<&Placement> = r.placements.iter().filter(|p| p.asset_id == "road_straight").collect();
    let along_x: Vec<_> = straight.iter().filter(|p| p.transform.rotation.yaw.abs() < 1e-9).collect();
    let along_y: Vec<_> = straight.iter().filter(|p| (p.transform.rotation.yaw.abs() - 90.0).abs() < 1e-9).collect();
    assert_eq!(along_x.len() + along_y.len(), straight.len());
    assert!(along_x.iter().all(|p| (p.transform.location.y - cy).abs() < 1e-9));
    assert!(along_y.iter().all(|p| (p.transform.location.x - cx).abs() < 1e-9));
    // Both arms extend on both sides of the crossing.
    for (v, c) in [(along_x.iter().map(|p| p.transform.location.x).collect::<Vec<_>>(), cx), (along_y.iter().map(|p| p.transform.location.y).collect(), cy)] {
        assert!(v.iter().any(|t| *t < c) && v.iter().any(|t| *t > c));
    }
}

#[test]
fn zero_counts_give_roads_only() {
    let mut spec = GenerationSpec::new(Archetype::Residential, 3);
    spec.counts = Some(BTreeMap::new());
    let plan = plan_layout(&spec, &catalog(), &spacing()).unwrap();
    let non_empty: Vec<&str> = plan.batches.iter().filter(|b| !b.placements.is_empty()).map(|b| b.label.as_str()).collect();
    assert_eq!(non_empty, ["roads"]);
    let cat = catalog();
    assert!(plan.placements().all(|p| cat.get(&p.asset_id).unwrap().category == Category::Road));
}

#[test]
fn infeasible_counts_name_the_constraint() {
    let mut spec = GenerationSpec::new(Archetype::Residential, 3);
    spec.counts = Some([(Category::Building, 500)].into_iter().collect());
    match plan_layout(&spec, &catalog(), &spacing()) {
        Err(BuildError::Infeasible { constraint, requested, capacity }) => {
            assert_eq!(requested, 500);
            assert!(capacity < 500);
            assert!(constraint.contains("building"), "{constraint}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn plans_are_deterministic_and_seed_sensitive() {
    let cat = catalog();
    let sp = spacing();
    for a in Archetype::ALL {
        let p1 = plan_layout(&GenerationSpec::new(a, 5), &cat, &sp).unwrap();
        let p2 = plan_layout(&GenerationSpec::new(a, 5), &cat, &sp).unwrap();
        let p3 = plan_layout(&GenerationSpec::new(a, 6), &cat, &sp).unwrap();
        assert_eq!(p1, p2);
        assert_ne!(p1, p3);
    }
}

#[test]
fn building_rows_keep_the_skill_clearance() {
    let cat = catalog();
    let mut sp = spacing();
    for extra in [0.0, 300.0] {
        *sp.get_mut(&Category::Building).unwrap() += extra;
        let gap = sp[&Category::Building];
        for a in Archetype::ALL {
            let mut spec = GenerationSpec::new(a, 9);
            spec.difficulty.yaw_jitter_deg = Some(0.0);
            let plan = plan_layout(&spec, &cat, &sp).unwrap();
            let boxes: Vec<_> = plan
                .placements()
                .filter(|p| cat.get(&p.asset_id).unwrap().category == Category::Building)
                .map(|p| p.transform.world_aabb(cat.get(&p.asset_id).unwrap().base_extent))
                .collect();
            for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    let (a, b) = (&boxes[i], &boxes[j]);
                    let sx = (b.min.x - a.max.x).max(a.min.x - b.max.x);
                    let sy = (b.min.y - a.max.y).max(a.min.y - b.max.y);
                    assert!(sx.max(sy) >= gap - 1e-6, "{a:?} {b:?} separation {} < {gap}", sx.max(sy));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn placements_stay_inside_the_ground(seed in any::<u64>(), ai in 0usize..5, density in 0.0f64..0.3) {
        let mut spec = GenerationSpec::new(Archetype::ALL[ai], seed);
        spec.difficulty.obstacle_density = density;
        let cat = catalog();
        let plan = plan_layout(&spec, &cat, &spacing()).unwrap();
        let half = spec.ground_size / 2.0;
        let mut names = BTreeSet::new();
        for p in plan.placements() {
            let l = p.transform.location;
            prop_assert!(l.x.abs() <= half && l.y.abs() <= half, "{} at {:?}", p.name, l);
            prop_assert!(names.insert(p.name.clone()));
        }
        prop_assert_eq!(&plan.batches[0].label, "roads");
    }
}

#[test]
fn overlapping_buildings_are_revised() {
    let tmp = tempfile::tempdir().unwrap();
    let mut d = fresh_driver(tmp.path());
    let plan = BuildPlan {
        batches: vec![PlacementBatch {
            label: "buildings".into(),
            placements: vec![
                place("Bldg_000", "building_01", 0.0, 0.0, 1200.0),
                place("Bldg_001", "building_02", 500.0, 200.0, 1500.0),
            ],
        }],
        zones: vec![],
    };
    construct(&mut d, &plan).unwrap();
    let revisions: Vec<_> = d.revisions().cloned().collect();
    assert!(!revisions.is_empty());
    assert!(matches!(revisions[0].action, RevisionAction::Nudge { .. }));
    let scene = d.session().scene();
    assert_eq!(scene.actor_count(), 2);
    let col = verify::check_collisions(scene, d.session().catalog(), &CheckFilter::default(), 0.0).unwrap();
    assert!(col.pairs.is_empty());
}

#[test]
fn floating_and_out_of_bounds_actors_are_fixed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut d = fresh_driver(tmp.path());
    let plan = BuildPlan {
        batches: vec![PlacementBatch {
            label: "props".into(),
            placements: vec![place("Prop_000", "crate", 0.0, 0.0, 400.0), place("Prop_001", "crate", 9600.0, 0.0, 50.0)],
        }],
        zones: vec![],
    };
    construct(&mut d, &plan).unwrap();
    let scene = d.session().scene();
    assert_eq!(scene.actor("Prop_000").unwrap().transform.location.z, 50.0);
    assert!(scene.actor("Prop_001").is_none());
    let kinds: Vec<_> = d.revisions().map(|r| r.action.clone()).collect();
    assert!(kinds.iter().any(|k| matches!(k, RevisionAction::Snap { dz } if *dz == -350.0)));
    assert!(kinds.iter().any(|k| matches!(k, RevisionAction::Delete { reason } if reason == "out_of_bounds")));
}

#[test]
fn empty_plan_leaves_an_empty_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let mut d = Driver::new(Session::new(catalog(), tmp.path()));
    construct(&mut d, &BuildPlan::default()).unwrap();
    assert!(d.trace().is_empty());
    let (col, grav, oob) = validity(d.session().scene(), &catalog());
    assert_eq!((col, grav, oob), (1.0, 1.0, 1.0));
}

#[test]
fn trace_replay_reproduces_the_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ctx(tmp.path());
    for a in [Archetype::Industrial, Archetype::MixedUse] {
        let mut spec = GenerationSpec::new(a, 21);
        spec.difficulty.obstacle_density = 0.2;
        let out = generate_scene(&spec, &mut c).unwrap();
        let again = replay_trace(c.catalog.clone(), tmp.path().join("replay"), &out.trace).unwrap();
        assert_eq!(again.content_hash(), out.scene.content_hash());
        assert_eq!(again.to_json(), out.scene.to_json());
    }
    // Revisions survive replay too.
    let mut d = fresh_driver(tmp.path());
    let plan = BuildPlan {
        batches: vec![PlacementBatch {
            label: "b".into(),
            placements: vec![place("A", "building_01", 0.0, 0.0, 1200.0), place("B", "building_01", 100.0, 0.0, 1300.0)],
        }],
        zones: vec![],
    };
    construct(&mut d, &plan).unwrap();
    let (scene, trace) = d.finish();
    let again = replay_trace(catalog(), tmp.path(), &trace).unwrap();
    assert_eq!(again.content_hash(), scene.content_hash());
}

#[test]
fn clean_scene_passes_in_round_one() {
    let tmp = tempfile::tempdir().unwrap();
    let mut d = fresh_driver(tmp.path());
    d.call("test", "spawn_blueprint_actor", json!({"actor_name": "C", "blueprint_id": "crate", "location": [0, 0, 50]})).unwrap();
    let (v, rounds) = verify_semantic(&mut d, "one crate").unwrap();
    assert_eq!((v.status, rounds), (VerdictStatus::Pass, 1));
}

#[test]
fn five_collisions_improve_within_three_rounds() {
    let tmp = tempfile::tempdir().unwrap();
    let mut d = fresh_driver(tmp.path());
    for i in 0..5 {
        let x = i as f64 * 2000.0 - 4000.0;
        for (k, dx) in [(0, 0.0), (1, 200.0)] {
            d.call(
                "test",
                "spawn_blueprint_actor",
                json!({"actor_name": format!("Cont_{i}_{k}"), "blueprint_id": "container_20ft", "location": [x + dx, 0, 130]}),
            )
            .unwrap();
        }
    }
    let before = verify::check_collisions(d.session().scene(), d.session().catalog(), &CheckFilter::default(), 0.0).unwrap();
    assert_eq!(before.pairs.len(), 5);
    let (v, rounds) = verify_semantic(&mut d, "ten containers").unwrap();
    let verdicts: Vec<Verdict> = d.rounds().map(|(_, v)| v.clone()).collect();
    assert_eq!(verdicts[0].status, VerdictStatus::Fail);
    assert!(rounds >= 2 && rounds <= MAX_VERIFY_ROUNDS);
    assert_eq!(v.status, VerdictStatus::Pass);
    // The only corrections were for the named issue.
    assert!(d.revisions().all(|r| matches!(r.action, RevisionAction::Nudge { .. })));
}

struct Grumpy;

impl Judge for Grumpy {
    fn name(&self) -> &str {
        "grumpy"
    }
    fn judge(&self, _: &JudgeRequest) -> Result<Verdict, JudgeError> {
        Ok(Verdict {
            status: VerdictStatus::NeedsImprovement,
            issues: vec![Issue {
                metric: "LAYOUT".into(),
                message: "streets feel cramped".into(),
            }],
            scores: BTreeMap::new(),
        })
    }
}

#[test]
fn repeated_judge_failures_promote_a_skill() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ctx(tmp.path());
    let mut reg = JudgeRegistry::with_builtin();
    reg.register(Arc::new(Grumpy));
    c.judges = Arc::new(reg);
    c.judge_name = "grumpy".into();
    let before = c.skills.len();
    let first = generate_scene(&GenerationSpec::new(Archetype::Residential, 1), &mut c).unwrap();
    assert!(first.promoted.is_empty());
    assert!(first.rounds <= MAX_VERIFY_ROUNDS);
    let second = generate_scene(&GenerationSpec::new(Archetype::Residential, 2), &mut c).unwrap();
    assert_eq!(second.promoted.len(), 1);
    assert_eq!(c.skills.len(), before + 1);
    assert!(second.trace.iter().any(|r| matches!(r, TraceRecord::Promotion { .. })));
    assert!(tmp.path().join("skills").join(format!("{}.md", second.promoted[0])).is_file());
    let third = generate_scene(&GenerationSpec::new(Archetype::Residential, 3), &mut c).unwrap();
    assert!(third.promoted.is_empty());
}

#[test]
fn unavailable_judge_propagates() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ctx(tmp.path());
    c.judge_name = "missing".into();
    let err = generate_scene(&GenerationSpec::new(Archetype::Residential, 1), &mut c).unwrap_err();
    assert!(matches!(err, BuildError::Tool { stage: "verify", ref code, .. } if code == "judge_unavailable"), "{err}");
}

#[test]
fn thirty_seeds_give_thirty_layouts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ctx(tmp.path());
    let mut hashes = BTreeSet::new();
    for seed in 0..30 {
        let out = generate_scene(&GenerationSpec::new(Archetype::ALL[seed as usize % 5], seed), &mut c).unwrap();
        hashes.insert(out.scene.content_hash());
    }
    assert_eq!(hashes.len(), 30);
}

#[test]
fn spec_json_round_trips_and_validates() {
    let spec = GenerationSpec::from_json(r#"{"archetype": "industrial", "seed": 4, "counts": {"container": 3}}"#).unwrap();
    assert_eq!(spec.effective_counts()[&Category::Container], 3);
    assert_eq!(spec.ground_size, 19000.0);
    let text = spec.request_text();
    assert_eq!(verify::requested_counts_from_text(&text), spec.effective_counts());
    assert!(GenerationSpec::from_json(r#"{"archetype": "suburb", "seed": 4}"#).is_err());
    assert!(GenerationSpec::from_json(r#"{"archetype": "industrial", "seed": 4, "difficulty": {"obstacle_density": 2}}"#).is_err());
    for a in Archetype::ALL {
        let s = GenerationSpec::new(a, 0);
        assert_eq!(verify::requested_counts_from_text(&s.request_text()), s.effective_counts());
    }
}
