use super::*;
use crate::scene::AssetDescriptor;
use crate::{Transform, Vec3};
use proptest::prelude::*;

fn catalog() -> AssetCatalog {
    let d = |id: &str, c: Category, e: [f64; 3]| AssetDescriptor {
        asset_id: id.into(),
        category: c,
        base_extent: Vec3::from_array(e),
    };
    AssetCatalog::from_descriptors(vec![
        d("box200", Category::Building, [200.0, 200.0, 200.0]),
        d("small", Category::Prop, [50.0, 50.0, 50.0]),
        d("road", Category::Road, [1000.0, 400.0, 5.0]),
        d("crate", Category::Container, [300.0, 120.0, 130.0]),
    ])
    .unwrap()
}

fn scene() -> SceneGraph {
    SceneGraph::with_ground(19000.0, "noon").unwrap()
}

fn put(s: &mut SceneGraph, cat: &AssetCatalog, name: &str, asset: &str, x: f64, y: f64, z: f64) {
    s.spawn_actor(cat, name, asset, Transform::at(Vec3::new(x, y, z))).unwrap();
}

#[test]
fn separated_boxes_do_not_collide() {
    let cat = catalog();
    let mut s = scene();
    put(&mut s, &cat, "a", "box200", 0.0, 0.0, 200.0);
    put(&mut s, &cat, "b", "box200", 401.0, 0.0, 200.0);
    let r = check_collisions(&s, &cat, &CheckFilter::default(), 0.0).unwrap();
    assert!(r.pairs.is_empty());
    assert_eq!(r.collision_free_rate, 1.0);
}

#[test]
fn overlap_area_matches_interval_oracle() {
    let cat = catalog();
    let mut s = scene();
    put(&mut s, &cat, "a", "box200", 0.0, 0.0, 200.0);
    // x overlap [350-200, 200] = 50, y overlap [320-200, 200] = 80
    put(&mut s, &cat, "b", "box200", 350.0, 320.0, 200.0);
    let r = check_collisions(&s, &cat, &CheckFilter::default(), 0.0).unwrap();
    assert_eq!(
        r.pairs,
        vec![CollisionPair {
            actor_a: "a".into(),
            actor_b: "b".into(),
            overlap_area: 4000.0
        }]
    );
    assert_eq!(r.collision_free_rate, 0.0);
    let strict = check_collisions(&s, &cat, &CheckFilter::default(), 4000.5).unwrap();
    assert!(strict.pairs.is_empty());
}

#[test]
fn small_actors_and_roads_are_exempt() {
    let cat = catalog();
    let mut s = scene();
    put(&mut s, &cat, "bldg", "box200", 0.0, 0.0, 200.0);
    put(&mut s, &cat, "cone", "small", 10.0, 10.0, 50.0);
    put(&mut s, &cat, "street", "road", 0.0, 0.0, 5.0);
    let r = check_collisions(&s, &cat, &CheckFilter::default(), 0.0).unwrap();
    assert!(r.pairs.is_empty());
}

#[test]
fn spawned_scope_and_name_filter() {
    let cat = catalog();
    let mut s = scene();
    put(&mut s, &cat, "a", "box200", 0.0, 0.0, 200.0);
    put(&mut s, &cat, "b", "box200", 100.0, 0.0, 200.0);
    put(&mut s, &cat, "c", "box200", 5000.0, 0.0, 200.0);
    let only_c = CheckFilter {
        names: Some(["c".to_string()].into()),
        scope: Scope::All,
    };
    let r = check_collisions(&s, &cat, &only_c, 0.0).unwrap();
    assert!(r.pairs.is_empty());
    assert_eq!(r.collision_free_rate, 1.0);
    let only_a = CheckFilter {
        names: Some(["a".to_string()].into()),
        scope: Scope::Spawned,
    };
    assert_eq!(check_collisions(&s, &cat, &only_a, 0.0).unwrap().pairs.len(), 1);
}

#[test]
fn support_cases() {
    let cat = catalog();
    let mut s = scene();
    put(&mut s, &cat, "grounded", "box200", 0.0, 0.0, 200.0);
    put(&mut s, &cat, "floater", "box200", 3000.0, 0.0, 700.0);
    // base top at z=260, stacked bottom at z=260
    put(&mut s, &cat, "base", "crate", -3000.0, 0.0, 130.0);
    put(&mut s, &cat, "stacked", "crate", -3000.0, 50.0, 390.0);
    let r = check_vertical_support(&s, &cat, &CheckFilter::default(), 0.0, 10.0).unwrap();
    assert_eq!(
        r.floating,
        vec![FloatingActor {
            actor: "floater".into(),
            gap: 500.0
        }]
    );
    assert_eq!(r.supported_rate, 0.75);
}

#[test]
fn gravity_band_counts() {
    let cat = catalog();
    let mut s = scene();
    for (i, z) in [200.0, 200.0, 350.0, 500.0].iter().enumerate() {
        put(&mut s, &cat, &format!("a{i}"), "box200", i as f64 * 1000.0, 0.0, *z);
    }
    // bottoms: 0, 0, 150 (inside ±200), 300 (outside)
    assert_eq!(score_gravity(&s, &cat).unwrap(), 0.75);
    assert_eq!(score_gravity(&scene(), &cat).unwrap(), 1.0);
}

#[test]
fn bounds_are_inclusive() {
    let cat = catalog();
    let mut s = scene();
    put(&mut s, &cat, "edge", "small", 9500.0, 0.0, 50.0);
    let r = check_bounds(&s, &cat, 9500.0).unwrap();
    assert_eq!(r.in_bounds_rate, 1.0);
    put(&mut s, &cat, "out", "small", 9501.0, 0.0, 50.0);
    let r = check_bounds(&s, &cat, 9500.0).unwrap();
    assert_eq!(r.out_of_bounds, vec!["out".to_string()]);
    assert_eq!(check_bounds(&scene(), &cat, 9500.0).unwrap().in_bounds_rate, 1.0);
}

#[test]
fn graded_count_and_diversity() {
    let cat = catalog();
    let mut s = scene();
    for i in 0..3 {
        put(&mut s, &cat, &format!("b{i}"), "box200", i as f64 * 1000.0, 0.0, 200.0);
    }
    let req = MetricRequest {
        counts: [(Category::Building, 6)].into(),
        ..Default::default()
    };
    let m = compute_rule_metrics(&s, &cat, &req).unwrap();
    assert_eq!(m.cnt, Some(0.5));
    assert_eq!(m.div, Some(1.0));
    let exact = MetricRequest {
        counts: [(Category::Building, 3)].into(),
        ..Default::default()
    };
    assert_eq!(compute_rule_metrics(&s, &cat, &exact).unwrap().cnt, Some(1.0));
}

#[test]
fn preservation_and_edit_count() {
    let cat = catalog();
    let mut base = scene();
    for i in 0..4 {
        put(&mut base, &cat, &format!("keep{i}"), "box200", i as f64 * 1000.0, 0.0, 200.0);
    }
    put(&mut base, &cat, "Demo_x", "small", 0.0, 3000.0, 50.0);
    let mut edited = base.clone();
    edited.delete_actor("Demo_x").unwrap();
    put(&mut edited, &cat, "Demo_new", "small", 0.0, 4000.0, 50.0);
    let edit = EditSpec {
        targets: vec!["Demo_*".into()],
        min_edits: 1,
        max_edits: 2,
    };
    let req = MetricRequest {
        edit: Some(&edit),
        baseline: Some(&base),
        ..Default::default()
    };
    let m = compute_rule_metrics(&edited, &cat, &req).unwrap();
    assert_eq!(m.pres, Some(1.0));
    assert_eq!(m.ecnt, Some(1.0));
    let missing = MetricRequest {
        edit: Some(&edit),
        ..Default::default()
    };
    assert!(matches!(
        compute_rule_metrics(&edited, &cat, &missing),
        Err(VerifyError::MissingBaseline)
    ));
}

fn summary_for(s: &SceneGraph, cat: &AssetCatalog) -> SceneSummary {
    let metrics = compute_rule_metrics(s, cat, &MetricRequest::default()).unwrap();
    let col = check_collisions(s, cat, &CheckFilter::default(), 0.0).unwrap();
    SceneSummary {
        actor_count: s.actor_count(),
        collision_pairs: col.pairs.len(),
        metrics,
        ..Default::default()
    }
}

#[test]
fn builtin_judge_passes_clean_scene_and_fails_five_collisions() {
    let cat = catalog();
    let mut clean = scene();
    put(&mut clean, &cat, "a", "box200", 0.0, 0.0, 200.0);
    let req = |s: &SceneGraph| JudgeRequest {
        request_text: "container maze".into(),
        summary: summary_for(s, &cat),
        screenshots: vec![],
    };
    let v = RuleJudge.judge(&req(&clean)).unwrap();
    assert_eq!(v.status, VerdictStatus::Pass);

    let mut messy = scene();
    for i in 0..5 {
        let x = i as f64 * 2000.0;
        put(&mut messy, &cat, &format!("c{i}a"), "crate", x, 0.0, 130.0);
        put(&mut messy, &cat, &format!("c{i}b"), "crate", x + 100.0, 0.0, 130.0);
    }
    let r = req(&messy);
    assert_eq!(r.summary.collision_pairs, 5);
    let v1 = RuleJudge.judge(&r).unwrap();
    assert_eq!(v1.status, VerdictStatus::Fail);
    assert!(v1.mentions("COL"));
    assert_eq!(v1, RuleJudge.judge(&r).unwrap());
}

#[test]
fn registry_reports_missing_judge() {
    let reg = JudgeRegistry::with_builtin();
    assert!(reg.get("rule").is_ok());
    assert!(matches!(reg.get("vlm"), Err(JudgeError::Unavailable(_))));
}

#[test]
fn rubric_normalizes() {
    assert_eq!(RubricScore::new(7).unwrap().normalized, 0.7);
    assert!(RubricScore::new(11).is_none());
}

// Brute-force all-pairs interval oracle.
fn oracle_pairs(s: &SceneGraph, cat: &AssetCatalog, min_area: f64) -> Vec<(String, String, f64)> {
    let actors: Vec<_> = s.actors().collect();
    let mut out = Vec::new();
    for (i, a) in actors.iter().enumerate() {
        for b in &actors[i + 1..] {
            let (ba, bb) = (a.world_aabb(cat).unwrap(), b.world_aabb(cat).unwrap());
            let big = |x: &crate::Aabb| {
                let h = x.half_extents();
                h.x > 100.0 || h.y > 100.0 || h.z > 100.0
            };
            if a.category == Category::Road || b.category == Category::Road || !big(&ba) || !big(&bb) {
                continue;
            }
            let ix = ba.max.x.min(bb.max.x) - ba.min.x.max(bb.min.x);
            let iy = ba.max.y.min(bb.max.y) - ba.min.y.max(bb.min.y);
            let iz = ba.max.z.min(bb.max.z) - ba.min.z.max(bb.min.z);
            if ix > 0.0 && iy > 0.0 && iz > 0.0 && ix * iy >= min_area {
                out.push((a.name.clone(), b.name.clone(), ix * iy));
            }
        }
    }
    out
}

fn random_scene() -> impl Strategy<Value = SceneGraph> {
    let assets = prop_oneof![Just("box200"), Just("small"), Just("road"), Just("crate")];
    proptest::collection::vec((assets, -2000.0..2000.0f64, -2000.0..2000.0f64, 0.0..400.0f64, -180.0..180.0f64), 0..30)
        .prop_map(|items| {
            let cat = catalog();
            let mut s = scene();
            for (i, (asset, x, y, z, yaw)) in items.into_iter().enumerate() {
                let t = Transform::at(Vec3::new(x, y, z)).with_yaw(yaw);
                s.spawn_actor(&cat, &format!("n{i:02}"), asset, t).unwrap();
            }
            s
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn collision_pairs_equal_brute_force(s in random_scene(), min_area in 0.0..50_000.0f64) {
        let cat = catalog();
        let got: Vec<_> = check_collisions(&s, &cat, &CheckFilter::default(), min_area).unwrap()
            .pairs.into_iter().map(|p| (p.actor_a, p.actor_b, p.overlap_area)).collect();
        prop_assert_eq!(got, oracle_pairs(&s, &cat, min_area));
    }

    #[test]
    fn raising_min_area_never_adds_pairs(s in random_scene(), a in 0.0..10_000.0f64, extra in 0.0..10_000.0f64) {
        let cat = catalog();
        let lo = check_collisions(&s, &cat, &CheckFilter::default(), a).unwrap();
        let hi = check_collisions(&s, &cat, &CheckFilter::default(), a + extra).unwrap();
        prop_assert!(hi.pairs.iter().all(|p| lo.pairs.contains(p)));
    }

    #[test]
    fn relabeling_preserves_pair_structure(s in random_scene()) {
        let cat = catalog();
        let mut renamed = scene();
        for a in s.actors() {
            let mut r = a.clone();
            r.name = format!("z_{}", a.name.chars().rev().collect::<String>());
            renamed.insert_record(r).unwrap();
        }
        let canon = |s: &SceneGraph, f: &dyn Fn(&str) -> String| {
            let mut v: Vec<_> = check_collisions(s, &cat, &CheckFilter::default(), 0.0).unwrap().pairs.into_iter()
                .map(|p| { let (a, b) = (f(&p.actor_a), f(&p.actor_b)); if a < b { (a, b) } else { (b, a) } })
                .collect();
            v.sort();
            v
        };
        let id = |n: &str| n.to_string();
        let back = |n: &str| n.trim_start_matches("z_").chars().rev().collect::<String>();
        prop_assert_eq!(canon(&s, &id), canon(&renamed, &back));
    }

    #[test]
    fn gravity_and_bounds_are_pure(s in random_scene()) {
        let cat = catalog();
        prop_assert_eq!(score_gravity(&s, &cat).unwrap(), score_gravity(&s, &cat).unwrap());
        prop_assert_eq!(check_bounds(&s, &cat, 1500.0).unwrap(), check_bounds(&s, &cat, 1500.0).unwrap());
    }
}
