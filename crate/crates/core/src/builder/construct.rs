use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BuildError, BuildPlan, GenerationSpec};
use crate::scene::{AssetCatalog, SceneGraph};
use crate::server::{replay_events, LoggedCall, Session, ToolError, BATCH_ALIAS};
use crate::skills::{FailureSignature, SkillIndex};
use crate::verify::{self, CollisionReport, SupportReport, Verdict};

/// Extra clearance added on top of the measured overlap when nudging, cm.
pub const NUDGE_MARGIN: f64 = 20.0;
/// Nudges an actor may receive before it is deleted instead.
pub const MAX_NUDGES: u32 = 5;
pub const MAX_VERIFY_ROUNDS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RevisionAction {
    Nudge { dx: f64, dy: f64, against: String },
    Snap { dz: f64 },
    Delete { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Revision {
    pub batch: String,
    pub actor: String,
    pub category: String,
    pub action: RevisionAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Call {
        stage: String,
        tool: String,
        args: Value,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<ToolError>,
    },
    Revision(Revision),
    Round {
        round: usize,
        verdict: Verdict,
    },
    Promotion {
        skill: String,
        signature: FailureSignature,
    },
}

/// Session wrapper that records every tool call and revision.
pub struct Driver {
    session: Session,
    trace: Vec<TraceRecord>,
}

impl Driver {
    pub fn new(session: Session) -> Self {
        Self {
            session,
            trace: Vec::new(),
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn call(&mut self, stage: &'static str, tool: &str, args: Value) -> Result<Value, BuildError> {
        let resp = self.session.call(tool, args.clone());
        self.trace.push(TraceRecord::Call {
            stage: stage.to_string(),
            tool: tool.to_string(),
            args,
            ok: resp.ok,
            error: resp.error.clone(),
        });
        if resp.ok {
            Ok(resp.payload.unwrap_or(Value::Null))
        } else {
            let e = resp.error.unwrap_or_else(|| ToolError::new("unknown", ""));
            Err(BuildError::Tool {
                stage,
                tool: tool.to_string(),
                code: e.code,
                message: e.message,
            })
        }
    }

    pub fn revisions(&self) -> impl Iterator<Item = &Revision> {
        self.trace.iter().filter_map(|r| match r {
            TraceRecord::Revision(v) => Some(v),
            _ => None,
        })
    }

    pub fn rounds(&self) -> impl Iterator<Item = (usize, &Verdict)> {
        self.trace.iter().filter_map(|r| match r {
            TraceRecord::Round { round, verdict } => Some((*round, verdict)),
            _ => None,
        })
    }

    pub fn note_promotion(&mut self, skill: &str, sig: &FailureSignature) {
        self.trace.push(TraceRecord::Promotion {
            skill: skill.to_string(),
            signature: sig.clone(),
        });
    }

    pub fn finish(self) -> (SceneGraph, Vec<TraceRecord>) {
        (self.session.scene().clone(), self.trace)
    }

    fn revise(&mut self, batch: &str, actor: &str, action: RevisionAction) {
        let category = self
            .session
            .scene()
            .actor(actor)
            .map(|a| a.category.as_str().to_string())
            .unwrap_or_default();
        self.trace.push(TraceRecord::Revision(Revision {
            batch: batch.to_string(),
            actor: actor.to_string(),
            category,
            action,
        }));
    }
}

#[derive(Clone, Debug, Default)]
pub struct ContextBundle {
    pub asset_count: usize,
    pub skills: Vec<String>,
}

/// Lists the catalog, retrieves skills for the archetype and sets up the ground.
pub fn acquire_context(
    driver: &mut Driver,
    skills: &SkillIndex,
    spec: &GenerationSpec,
) -> Result<ContextBundle, BuildError> {
    let assets = driver.call("context", "list_assets", json!({}))?;
    let asset_count = assets["count"].as_u64().unwrap_or(0) as usize;
    let retrieved = skills
        .retrieve(&spec.archetype.tags(), 5)
        .into_iter()
        .map(|d| d.name.clone())
        .collect();
    driver.call(
        "context",
        "setup_environment",
        json!({ "ground_size": spec.ground_size, "time_of_day": spec.time_of_day }),
    )?;
    Ok(ContextBundle {
        asset_count,
        skills: retrieved,
    })
}

/// Spawns each batch in one call, then checks and revises it before moving on.
pub fn construct(driver: &mut Driver, plan: &BuildPlan) -> Result<(), BuildError> {
    for batch in &plan.batches {
        if batch.placements.is_empty() {
            continue;
        }
        let steps: Vec<Value> = batch
            .placements
            .iter()
            .map(|p| {
                let t = &p.transform;
                json!({
                    "tool": "spawn_blueprint_actor",
                    "args": {
                        "actor_name": p.name,
                        "blueprint_id": p.asset_id,
                        "location": t.location.to_array(),
                        "rotation": [t.rotation.yaw, t.rotation.pitch, t.rotation.roll],
                        "scale": t.scale.to_array(),
                    }
                })
            })
            .collect();
        driver.call("construct", BATCH_ALIAS, json!({ "requests": steps }))?;
        let names: BTreeSet<String> = batch.placements.iter().map(|p| p.name.clone()).collect();
        resolve(driver, "construct", &batch.label, Some(names))?;
    }
    Ok(())
}

/// Fixes collisions, floating actors and out-of-bounds actors among `names`
/// (every actor when `None`). Returns the number of revisions made.
fn resolve(
    driver: &mut Driver,
    stage: &'static str,
    label: &str,
    names: Option<BTreeSet<String>>,
) -> Result<usize, BuildError> {
    let mut nudges: BTreeMap<String, u32> = BTreeMap::new();
    let mut revisions = 0;
    let owned = |n: &str, names: &Option<BTreeSet<String>>| names.as_ref().is_none_or(|s| s.contains(n));
    let limit = names.as_ref().map_or(driver.session.scene().actor_count(), BTreeSet::len) * (MAX_NUDGES as usize + 1) + 2;
    for _ in 0..limit {
        let filter = match &names {
            Some(n) => json!({ "names": n }),
            None => json!({}),
        };
        let col: CollisionReport = parse(driver.call(stage, "check_collisions", filter.clone())?);
        let sup: SupportReport = parse(driver.call(stage, "check_vertical_support", filter)?);
        let scene = driver.session.scene();
        let oob = verify::check_bounds(scene, driver.session.catalog(), scene.ground_half_extent)
            .map_err(|e| BuildError::InvalidSpec(e.to_string()))?;
        let oob: Vec<String> = oob.out_of_bounds.into_iter().filter(|n| owned(n, &names)).collect();
        if col.pairs.is_empty() && sup.floating.is_empty() && oob.is_empty() {
            return Ok(revisions);
        }
        let mut touched = BTreeSet::new();
        for name in oob {
            driver.revise(label, &name, RevisionAction::Delete { reason: "out_of_bounds".into() });
            driver.call(stage, "delete_actor", json!({ "name": name }))?;
            touched.insert(name);
            revisions += 1;
        }
        for f in &sup.floating {
            if touched.contains(&f.actor) || !owned(&f.actor, &names) {
                continue;
            }
            let loc = driver.session.scene().actor(&f.actor).map(|a| a.transform.location);
            if let Some(mut loc) = loc {
                loc.z -= f.gap;
                driver.revise(label, &f.actor, RevisionAction::Snap { dz: -f.gap });
                driver.call(stage, "set_actor_transform", json!({ "name": f.actor, "location": loc.to_array() }))?;
                touched.insert(f.actor.clone());
                revisions += 1;
            }
        }
        for p in &col.pairs {
            // Move the later-named actor of the pair unless only the other one is ours.
            let (mover, other) = if owned(&p.actor_b, &names) {
                (&p.actor_b, &p.actor_a)
            } else {
                (&p.actor_a, &p.actor_b)
            };
            if touched.contains(mover) || touched.contains(other) || !owned(mover, &names) {
                continue;
            }
            touched.insert(mover.clone());
            revisions += 1;
            let count = nudges.entry(mover.clone()).or_insert(0);
            *count += 1;
            if *count > MAX_NUDGES {
                driver.revise(label, mover, RevisionAction::Delete { reason: "collision_budget".into() });
                driver.call(stage, "delete_actor", json!({ "name": mover }))?;
                continue;
            }
            let scene = driver.session.scene();
            let cat = driver.session.catalog();
            let (Some(a), Some(b)) = (scene.actor(mover), scene.actor(other)) else { continue };
            let (Ok(ba), Ok(bb)) = (a.world_aabb(cat), b.world_aabb(cat)) else { continue };
            let ov = ba.overlap_lengths(&bb);
            let (ca, cb) = (ba.center(), bb.center());
            let away = |d: f64| if d >= 0.0 { 1.0 } else { -1.0 };
            let (dx, dy) = if ov.x <= ov.y {
                (away(ca.x - cb.x) * (ov.x + NUDGE_MARGIN), 0.0)
            } else {
                (0.0, away(ca.y - cb.y) * (ov.y + NUDGE_MARGIN))
            };
            let mut loc = a.transform.location;
            loc.x += dx;
            loc.y += dy;
            driver.revise(label, mover, RevisionAction::Nudge { dx, dy, against: other.clone() });
            driver.call(stage, "set_actor_transform", json!({ "name": mover, "location": loc.to_array() }))?;
        }
        if touched.is_empty() {
            break;
        }
    }
    Err(BuildError::Unresolved {
        batch: label.to_string(),
        detail: "violations remain after the revision loop".into(),
    })
}

fn parse<T: serde::de::DeserializeOwned>(v: Value) -> T {
    serde_json::from_value(v).expect("tool payload matches its report type")
}

/// Asks the configured judge for a verdict and applies targeted corrections for
/// collision, gravity and bounds issues, for at most [`MAX_VERIFY_ROUNDS`] rounds.
pub fn verify_semantic(driver: &mut Driver, request: &str) -> Result<(Verdict, usize), BuildError> {
    let mut round = 0;
    loop {
        round += 1;
        let payload = driver.call("verify", "verify_scene", json!({ "original_request": request }))?;
        let verdict: Verdict = serde_json::from_value(json!({
            "status": payload["status"],
            "issues": payload["issues"],
            "scores": payload["scores"],
        }))
        .map_err(|e| BuildError::Judge(e.to_string()))?;
        driver.trace.push(TraceRecord::Round {
            round,
            verdict: verdict.clone(),
        });
        let fixable = ["COL", "GRAV", "OOB"].iter().any(|m| verdict.mentions(m));
        if verdict.status == verify::VerdictStatus::Pass || round >= MAX_VERIFY_ROUNDS || !fixable {
            return Ok((verdict, round));
        }
        match resolve(driver, "verify", "verify", None) {
            Ok(0) => return Ok((verdict, round)),
            Ok(_) | Err(BuildError::Unresolved { .. }) => {}
            Err(e) => return Err(e),
        }
    }
}

/// Rebuilds a scene by re-issuing the successful mutating calls of a trace.
pub fn replay_trace(
    catalog: Arc<AssetCatalog>,
    output_dir: impl Into<PathBuf>,
    trace: &[TraceRecord],
) -> Result<SceneGraph, ToolError> {
    let events: Vec<LoggedCall> = trace
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Call { tool, args, ok: true, .. } if is_mutating(tool) => Some(LoggedCall {
                tool: tool.clone(),
                args: args.as_object().cloned().unwrap_or_default(),
            }),
            _ => None,
        })
        .collect();
    replay_events(catalog, output_dir, &events)
}

fn is_mutating(tool: &str) -> bool {
    matches!(
        tool,
        "spawn_blueprint_actor" | "spawn_actor" | "delete_actor" | "delete_all_spawned" | "set_actor_transform" | "setup_environment"
    ) || tool == BATCH_ALIAS
        || tool == "execute_python_script"
}
