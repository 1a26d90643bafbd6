use std::sync::{Arc, OnceLock};

use num_rational::Ratio;
use worldsmith::coevolve::{
    curves_csv, heldout_set, render_report, run_experiment_on, threshold, write_run_dir, AgentKind, Condition,
    CurriculumState, RunArtifact, RunConfig, ScenePool, Task, RUN_FILES,
};
use worldsmith::env::Action;
use worldsmith::scene::AssetCatalog;

const SEED: u64 = 5;

struct Fixture {
    _dir: tempfile::TempDir,
    pool: ScenePool,
    heldout: Vec<Task>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let pool = ScenePool::generate(Arc::new(AssetCatalog::builtin()), SEED, 4, 3, 4000.0, dir.path()).unwrap();
        let heldout = heldout_set(&pool, 24, SEED).unwrap();
        Fixture {
            _dir: dir,
            pool,
            heldout,
        }
    })
}

fn run(config: RunConfig) -> RunArtifact {
    let f = fixture();
    run_experiment_on(&f.pool, &f.heldout, &RunConfig { seed: SEED, ..config }).unwrap()
}

fn r(n: u64, d: u64) -> Ratio<u64> {
    Ratio::new(n, d)
}

#[test]
fn advance_needs_the_window_mean_at_threshold() {
    let mut c = CurriculumState::default();
    c.push(r(16, 20));
    assert!(c.maybe_advance());
    assert_eq!(c.level, 1);
    assert!(c.window.is_empty());

    // 0.75 needed at level 1: 0.70 then 0.80 averages to exactly 0.75.
    c.push(r(14, 20));
    assert!(!c.maybe_advance());
    c.push(r(16, 20));
    assert!(c.maybe_advance());
    assert_eq!(c.level, 2);

    // Only the last five entries count.
    for _ in 0..5 {
        c.push(r(0, 20));
    }
    for _ in 0..5 {
        c.push(r(14, 20));
    }
    assert_eq!(c.window.len(), 5);
    assert!(c.maybe_advance());

    let mut top = CurriculumState {
        level: 7,
        ..Default::default()
    };
    top.push(r(1, 1));
    assert!(!top.maybe_advance());
    assert_eq!(top.level, 7);
    assert_eq!(threshold(7), r(45, 100));
}

/// Replays the gate from the epoch reports alone. Every gated epoch's verdict
/// must match the exact window mean against the threshold of its level.
fn audit(run: &RunArtifact) -> usize {
    let (mut level, mut window, mut advances) = (0usize, Vec::<Ratio<u64>>::new(), 0);
    for e in &run.epochs {
        assert_eq!(e.level, Some(level), "epoch {}", e.epoch);
        window.push(r(e.successes, e.episodes));
        if window.len() > 5 {
            window.remove(0);
        }
        let mean = window.iter().fold(r(0, 1), |a, b| a + b) / window.len() as u64;
        assert_eq!(e.window_mean.as_deref(), Some(format!("{}/{}", mean.numer(), mean.denom()).as_str()));
        let should = level < 7 && mean >= threshold(level);
        assert_eq!(e.advanced, should, "epoch {}", e.epoch);
        if should {
            assert!(mean >= threshold(level));
            level += 1;
            window.clear();
            advances += 1;
        }
        assert_eq!(e.next_level, Some(level));
    }
    advances
}

#[test]
fn oracle_climbs_to_the_top_and_null_agent_stays() {
    let oracle = run(RunConfig {
        agent: AgentKind::Oracle,
        heldout_episodes: 24,
        ..Default::default()
    });
    assert_eq!(audit(&oracle), 7);
    let top = oracle.epochs.iter().position(|e| e.next_level == Some(7)).unwrap() + 1;
    assert!(top <= 25, "reached level 7 at epoch {top}");
    assert_eq!(oracle.epochs.last().unwrap().level, Some(7));

    let null = run(RunConfig {
        agent: AgentKind::Constant(Action::TurnLeft),
        heldout_episodes: 24,
        ..Default::default()
    });
    assert_eq!(audit(&null), 0);
    assert!(null.epochs.iter().all(|e| e.level == Some(0) && e.successes == 0));
    assert_eq!(null.epochs.len(), 25);
}

#[test]
fn fixed_level_and_frozen_learner() {
    let fixed = run(RunConfig {
        condition: Condition::FixedL3,
        heldout_episodes: 24,
        ..Default::default()
    });
    assert!(fixed.epochs.iter().all(|e| e.level == Some(3) && e.levels_used == [3] && !e.advanced));
    assert!(fixed.epochs.iter().all(|e| e.window_mean.is_none()));

    let frozen = run(RunConfig {
        condition: Condition::NoLearning,
        heldout_episodes: 24,
        ..Default::default()
    });
    assert!(frozen.epochs.iter().all(|e| e.rule_count == 0));
    assert!(frozen.rules_final.is_empty());
    assert_eq!(frozen.distillations, 0);
    audit(&frozen);

    let random = run(RunConfig {
        condition: Condition::RandomLevel,
        epochs: 5,
        ..Default::default()
    });
    assert!(random.epochs.iter().all(|e| e.level.is_none()));
    let used: std::collections::BTreeSet<usize> = random.epochs.iter().flat_map(|e| e.levels_used.clone()).collect();
    assert!(used.len() >= 4, "{used:?}");
}

#[test]
fn evals_land_every_fifth_epoch_and_runs_repeat() {
    let cfg = RunConfig {
        epochs: 10,
        episodes_per_epoch: 10,
        ..Default::default()
    };
    let a = run(cfg.clone());
    assert_eq!(a.evals.iter().map(|e| e.epoch).collect::<Vec<_>>(), [5, 10]);
    for e in &a.epochs {
        assert_eq!(e.eval.is_some(), e.epoch % 5 == 0);
    }
    assert_eq!(a.final_eval().unwrap().metrics.n, fixture().heldout.len());
    // 100 learning episodes: ten distillations.
    assert_eq!(a.distillations, 10);
    let b = run(cfg);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn run_directory_and_curves() {
    let a = run(RunConfig {
        heldout_episodes: 24,
        ..Default::default()
    });
    let csv_text = curves_csv(&a);
    let mut rd = csv::Reader::from_reader(csv_text.as_bytes());
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 25);
    // Every curve value comes straight from the epoch reports.
    for (row, e) in rows.iter().zip(&a.epochs) {
        assert_eq!(row[0].parse::<usize>().unwrap(), e.epoch);
        assert_eq!(row[1].parse::<usize>().unwrap(), e.level.unwrap());
        let sr: f64 = row[2].parse().unwrap();
        assert!((sr - e.successes as f64 / e.episodes as f64).abs() < 1e-6);
        assert_eq!(&row[4] == "1", e.advanced);
        assert_eq!(row[5].parse::<usize>().unwrap(), e.rule_count);
        assert_eq!(row[6].is_empty(), e.eval.is_none());
    }
    let levels: Vec<usize> = a.epochs.iter().map(|e| e.level.unwrap()).collect();
    assert!(levels.windows(2).all(|w| w[0] <= w[1]));

    let dir = tempfile::tempdir().unwrap();
    write_run_dir(dir.path(), &a).unwrap();
    for f in RUN_FILES {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let epochs = std::fs::read_to_string(dir.path().join("epochs.jsonl")).unwrap();
    assert_eq!(epochs.lines().count(), 25);
    let config: RunConfig = serde_json::from_str(&std::fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(config, a.config);
    let report = render_report(std::slice::from_ref(&a));
    assert!(report.contains("| CoEvolve | 5 |"));
}

#[test]
fn bad_configs_are_rejected() {
    let f = fixture();
    let bad = RunConfig {
        eval_every: 0,
        ..Default::default()
    };
    assert!(run_experiment_on(&f.pool, &f.heldout, &bad).is_err());
    assert_eq!("no-learning".parse::<Condition>().unwrap(), Condition::NoLearning);
    assert_eq!("fixed_l3".parse::<Condition>().unwrap(), Condition::FixedL3);
    assert!("harder".parse::<Condition>().is_err());
}
