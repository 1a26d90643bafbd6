//! Rule-based scene verification: collisions, vertical support, gravity, bounds and
//! the quantitative rule metrics, plus the pluggable semantic judge.

mod judge;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use judge::{
    ExternalJudge, Issue, Judge, JudgeError, JudgeRegistry, JudgeRequest, RubricScore, RuleJudge,
    SceneSummary, Verdict, VerdictStatus,
};

use crate::scene::{ActorRecord, AssetCatalog, Category, SceneError, SceneGraph};
use crate::Aabb;

/// Actors need a world half-extent above this (cm) to take part in collision checks.
pub const COLLISION_MIN_HALF_EXTENT: f64 = 100.0;
/// Bottom faces within this distance (cm) of the ground count as grounded.
pub const GRAVITY_BAND: f64 = 200.0;
pub const DEFAULT_SUPPORT_TOLERANCE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("preservation / edit-count metrics need a baseline scene")]
    MissingBaseline,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Which actors a check looks at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    All,
    /// Only actors spawned during the current session.
    Spawned,
}

impl Scope {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" | "level" => Some(Scope::All),
            "spawned" | "session" => Some(Scope::Spawned),
            _ => None,
        }
    }

    fn admits(self, a: &ActorRecord) -> bool {
        match self {
            Scope::All => true,
            Scope::Spawned => a.spawned_in_session,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckFilter {
    /// When set, only actors with these names are examined.
    pub names: Option<BTreeSet<String>>,
    pub scope: Scope,
}

impl CheckFilter {
    fn admits(&self, a: &ActorRecord) -> bool {
        self.scope.admits(a) && self.names.as_ref().is_none_or(|n| n.contains(&a.name))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionPair {
    pub actor_a: String,
    pub actor_b: String,
    /// XY-plane intersection area, cm².
    pub overlap_area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub pairs: Vec<CollisionPair>,
    pub collision_free_rate: f64,
}

impl CollisionReport {
    pub fn colliding_actors(&self) -> BTreeSet<&str> {
        self.pairs
            .iter()
            .flat_map(|p| [p.actor_a.as_str(), p.actor_b.as_str()])
            .collect()
    }
}

fn boxes<'a>(
    scene: &'a SceneGraph,
    catalog: &AssetCatalog,
    filter: impl Fn(&ActorRecord) -> bool,
) -> Result<Vec<(&'a ActorRecord, Aabb)>, SceneError> {
    scene
        .actors()
        .filter(|a| filter(a))
        .map(|a| a.world_aabb(catalog).map(|b| (a, b)))
        .collect()
}

fn collision_eligible(a: &ActorRecord, b: &Aabb) -> bool {
    !a.category.is_environment() && b.half_extents().max_component() > COLLISION_MIN_HALF_EXTENT
}

/// All eligible AABB-overlapping pairs whose XY overlap area is at least `min_area`.
///
/// The collision-free rate is the fraction of non-environment actors in the filter
/// that appear in no reported pair (1.0 for an empty selection).
pub fn check_collisions(
    scene: &SceneGraph,
    catalog: &AssetCatalog,
    filter: &CheckFilter,
    min_area: f64,
) -> Result<CollisionReport, SceneError> {
    let considered = boxes(scene, catalog, |a| {
        filter.scope.admits(a) && !a.category.is_environment()
    })?;
    let mut eligible: Vec<&(&ActorRecord, Aabb)> = considered
        .iter()
        .filter(|(a, b)| collision_eligible(a, b))
        .collect();
    // sweep along x
    eligible.sort_by(|l, r| l.1.min.x.total_cmp(&r.1.min.x).then(l.0.name.cmp(&r.0.name)));
    let mut pairs = Vec::new();
    for i in 0..eligible.len() {
        let &(a, ab) = eligible[i];
        for &&(b, bb) in &eligible[i + 1..] {
            if bb.min.x >= ab.max.x {
                break;
            }
            if !(filter.admits(a) || filter.admits(b)) {
                continue;
            }
            if !ab.intersects(&bb) {
                continue;
            }
            let area = ab.xy_overlap_area(&bb);
            if area > 0.0 && area >= min_area {
                let (x, y) = if a.name < b.name { (a, b) } else { (b, a) };
                pairs.push(CollisionPair {
                    actor_a: x.name.clone(),
                    actor_b: y.name.clone(),
                    overlap_area: area,
                });
            }
        }
    }
    pairs.sort_by(|p, q| (&p.actor_a, &p.actor_b).cmp(&(&q.actor_a, &q.actor_b)));
    let report = CollisionReport {
        collision_free_rate: 1.0,
        pairs,
    };
    let selected: Vec<&str> = considered
        .iter()
        .filter(|(a, _)| filter.admits(a))
        .map(|(a, _)| a.name.as_str())
        .collect();
    let hit = report.colliding_actors();
    let rate = if selected.is_empty() {
        1.0
    } else {
        let clean = selected.iter().filter(|n| !hit.contains(*n)).count();
        clean as f64 / selected.len() as f64
    };
    Ok(CollisionReport {
        collision_free_rate: rate,
        ..report
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloatingActor {
    pub actor: String,
    /// Distance from the box bottom down to the ground, cm.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub floating: Vec<FloatingActor>,
    pub supported_rate: f64,
}

/// Flags non-environment actors whose bottom sits more than `tolerance` above
/// `ground_z` with no other actor's top within `tolerance` below it under an
/// overlapping footprint.
pub fn check_vertical_support(
    scene: &SceneGraph,
    catalog: &AssetCatalog,
    filter: &CheckFilter,
    ground_z: f64,
    tolerance: f64,
) -> Result<SupportReport, SceneError> {
    let all = boxes(scene, catalog, |_| true)?;
    let mut floating = Vec::new();
    let mut considered = 0usize;
    for (a, ab) in &all {
        if a.category.is_environment() || !filter.admits(a) {
            continue;
        }
        considered += 1;
        let bottom = ab.min.z;
        if bottom <= ground_z + tolerance {
            continue;
        }
        let supported = all.iter().any(|(b, bb)| {
            b.name != a.name
                && bb.max.z <= bottom
                && bb.max.z >= bottom - tolerance
                && ab.xy_overlap_area(bb) > 0.0
        });
        if !supported {
            floating.push(FloatingActor {
                actor: a.name.clone(),
                gap: bottom - ground_z,
            });
        }
    }
    let supported_rate = if considered == 0 {
        1.0
    } else {
        (considered - floating.len()) as f64 / considered as f64
    };
    Ok(SupportReport {
        floating,
        supported_rate,
    })
}

/// Fraction of non-environment actors whose bottom face lies within ±200 cm of the ground.
pub fn score_gravity(scene: &SceneGraph, catalog: &AssetCatalog) -> Result<f64, SceneError> {
    let all = boxes(scene, catalog, |a| !a.category.is_environment())?;
    if all.is_empty() {
        return Ok(1.0);
    }
    let ok = all
        .iter()
        .filter(|(_, b)| (b.min.z - scene.ground_z).abs() <= GRAVITY_BAND)
        .count();
    Ok(ok as f64 / all.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub out_of_bounds: Vec<String>,
    pub in_bounds_rate: f64,
}

/// Centre-point bounds test: an actor is in bounds iff `|x| <= h` and `|y| <= h`.
pub fn check_bounds(
    scene: &SceneGraph,
    catalog: &AssetCatalog,
    half_extent: f64,
) -> Result<BoundsReport, SceneError> {
    let all = boxes(scene, catalog, |_| true)?;
    let out_of_bounds: Vec<String> = all
        .iter()
        .filter(|(_, b)| {
            let c = b.center();
            !(c.x.abs() <= half_extent && c.y.abs() <= half_extent)
        })
        .map(|(a, _)| a.name.clone())
        .collect();
    let in_bounds_rate = if all.is_empty() {
        1.0
    } else {
        (all.len() - out_of_bounds.len()) as f64 / all.len() as f64
    };
    Ok(BoundsReport {
        out_of_bounds,
        in_bounds_rate,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneMetricSet {
    #[serde(rename = "CNT", skip_serializing_if = "Option::is_none", default)]
    pub cnt: Option<f64>,
    #[serde(rename = "DIV", skip_serializing_if = "Option::is_none", default)]
    pub div: Option<f64>,
    #[serde(rename = "COL", skip_serializing_if = "Option::is_none", default)]
    pub col: Option<f64>,
    #[serde(rename = "GRAV", skip_serializing_if = "Option::is_none", default)]
    pub grav: Option<f64>,
    #[serde(rename = "OOB", skip_serializing_if = "Option::is_none", default)]
    pub oob: Option<f64>,
    #[serde(rename = "PRES", skip_serializing_if = "Option::is_none", default)]
    pub pres: Option<f64>,
    #[serde(rename = "ECNT", skip_serializing_if = "Option::is_none", default)]
    pub ecnt: Option<f64>,
}

/// Edit instruction bounds used by PRES and ECNT.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditSpec {
    /// Glob patterns naming the actors the edit is allowed to touch.
    pub targets: Vec<String>,
    pub min_edits: usize,
    pub max_edits: usize,
}

#[derive(Clone, Debug, Default)]
pub struct MetricRequest<'a> {
    /// Requested actor counts per category.
    pub counts: BTreeMap<Category, u32>,
    pub ground_half_extent: Option<f64>,
    pub edit: Option<&'a EditSpec>,
    pub baseline: Option<&'a SceneGraph>,
}

/// CNT is the mean over requested categories of `min(placed, expected) / expected`;
/// DIV is distinct assets used over distinct assets available in those categories.
pub fn compute_rule_metrics(
    scene: &SceneGraph,
    catalog: &AssetCatalog,
    req: &MetricRequest<'_>,
) -> Result<SceneMetricSet, VerifyError> {
    let requested: Vec<(Category, u32)> = req
        .counts
        .iter()
        .filter(|(_, n)| **n > 0)
        .map(|(c, n)| (*c, *n))
        .collect();
    let mut placed: BTreeMap<Category, u32> = BTreeMap::new();
    for a in scene.actors() {
        *placed.entry(a.category).or_default() += 1;
    }
    let cnt = if requested.is_empty() {
        1.0
    } else {
        requested
            .iter()
            .map(|(c, n)| placed.get(c).copied().unwrap_or(0).min(*n) as f64 / *n as f64)
            .sum::<f64>()
            / requested.len() as f64
    };
    let div = if requested.is_empty() {
        None
    } else {
        let cats: BTreeSet<Category> = requested.iter().map(|(c, _)| *c).collect();
        let used: BTreeSet<&str> = scene
            .actors()
            .filter(|a| cats.contains(&a.category))
            .map(|a| a.asset_id.as_str())
            .collect();
        let available = catalog
            .list(None)
            .into_iter()
            .filter(|a| cats.contains(&a.category))
            .count();
        (available > 0).then(|| (used.len() as f64 / available as f64).min(1.0))
    };
    let col = check_collisions(scene, catalog, &CheckFilter::default(), 0.0)?.collision_free_rate;
    let grav = score_gravity(scene, catalog)?;
    let half = req.ground_half_extent.unwrap_or(scene.ground_half_extent);
    let oob = check_bounds(scene, catalog, half)?.in_bounds_rate;
    let (pres, ecnt) = match req.edit {
        None => (None, None),
        Some(edit) => {
            let base = req.baseline.ok_or(VerifyError::MissingBaseline)?;
            let (p, e) = edit_metrics(scene, base, edit)?;
            (Some(p), Some(e))
        }
    };
    Ok(SceneMetricSet {
        cnt: Some(cnt),
        div,
        col: Some(col),
        grav: Some(grav),
        oob: Some(oob),
        pres,
        ecnt,
    })
}

fn edit_metrics(
    scene: &SceneGraph,
    baseline: &SceneGraph,
    edit: &EditSpec,
) -> Result<(f64, f64), SceneError> {
    let patterns = edit
        .targets
        .iter()
        .map(|p| {
            glob::Pattern::new(p).map_err(|e| SceneError::BadPattern {
                pattern: p.clone(),
                reason: e.msg.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let targeted = |name: &str| patterns.iter().any(|p| p.matches(name));
    let untouched: Vec<&ActorRecord> = baseline.actors().filter(|a| !targeted(&a.name)).collect();
    let preserved = untouched
        .iter()
        .filter(|a| scene.actor(&a.name).is_some_and(|now| now.transform == a.transform))
        .count();
    let pres = if untouched.is_empty() {
        1.0
    } else {
        preserved as f64 / untouched.len() as f64
    };
    let added = scene.actors().filter(|a| baseline.actor(&a.name).is_none()).count();
    let mut removed = 0;
    let mut moved = 0;
    for a in baseline.actors() {
        match scene.actor(&a.name) {
            None => removed += 1,
            Some(now) if now.transform != a.transform => moved += 1,
            Some(_) => {}
        }
    }
    let edits = added + removed + moved;
    let ecnt = if (edit.min_edits..=edit.max_edits).contains(&edits) {
        1.0
    } else {
        0.0
    };
    Ok((pres, ecnt))
}

#[cfg(test)]
mod tests;

const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
    "twenty",
];

fn category_word(w: &str) -> Option<Category> {
    let w = w.trim_end_matches('s');
    Some(match w {
        "building" | "house" | "shop" | "store" | "tower" | "office" => Category::Building,
        "tree" => Category::Tree,
        "vehicle" | "car" | "truck" | "bus" | "van" | "suv" | "scooter" => Category::Vehicle,
        "bench" | "benche" | "lamp" | "streetlight" | "hydrant" | "bin" | "sign" | "mailboxe" | "mailbox"
        | "shelter" | "couch" | "couche" | "furniture" => Category::StreetFurniture,
        "road" | "street" | "crosswalk" | "sidewalk" => Category::Road,
        "cone" | "crate" | "barrel" | "pallet" | "planter" | "bollard" | "prop" | "obstacle" => Category::Prop,
        "container" => Category::Container,
        _ => return None,
    })
}

/// Pulls "<number> [adjective] <noun>" counts out of a free-text request, e.g.
/// "three buildings and 12 red cars". At most one adjective may sit between.
pub fn requested_counts_from_text(text: &str) -> BTreeMap<Category, u32> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_ascii_lowercase())
        .collect();
    let mut out = BTreeMap::new();
    for (i, w) in words.iter().enumerate() {
        let n = w
            .parse::<u32>()
            .ok()
            .or_else(|| NUMBER_WORDS.iter().position(|x| x == w).map(|p| p as u32));
        let Some(n) = n else { continue };
        let cat = words[i + 1..]
            .iter()
            .take(2)
            .find_map(|w| category_word(w));
        if let Some(c) = cat {
            *out.entry(c).or_insert(0) += n;
        }
    }
    out
}
