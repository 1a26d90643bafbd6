//! Scene generation: context acquisition, layout planning, verified construction,
//! semantic verification and skill promotion, all driven through tool calls on a
//! [`Session`] so every scene is reproducible from its trace.

mod construct;
mod plan;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use construct::{
    acquire_context, construct, replay_trace, verify_semantic, ContextBundle, Driver, Revision, RevisionAction,
    TraceRecord, MAX_NUDGES, MAX_VERIFY_ROUNDS, NUDGE_MARGIN,
};
pub use plan::{plan_layout, BuildPlan, Placement, PlacementBatch};

use crate::scene::{AssetCatalog, Category, SceneGraph};
use crate::server::Session;
use crate::skills::{FailureSignature, FailureStore, SkillAuthor, SkillError, SkillIndex, TemplateAuthor};
use crate::verify::{JudgeRegistry, RuleJudge, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    DowntownIntersection,
    Residential,
    Industrial,
    CommercialAvenue,
    MixedUse,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::DowntownIntersection,
        Archetype::Residential,
        Archetype::Industrial,
        Archetype::CommercialAvenue,
        Archetype::MixedUse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::DowntownIntersection => "downtown_intersection",
            Archetype::Residential => "residential",
            Archetype::Industrial => "industrial",
            Archetype::CommercialAvenue => "commercial_avenue",
            Archetype::MixedUse => "mixed_use",
        }
    }

    /// Skill tags retrieved for this archetype.
    pub fn tags(self) -> Vec<&'static str> {
        let mut t = vec!["layout", "placement", "archetype", "roads"];
        t.extend(match self {
            Archetype::DowntownIntersection | Archetype::CommercialAvenue => ["buildings", "furniture"],
            Archetype::Residential | Archetype::MixedUse => ["trees", "dressing"],
            Archetype::Industrial => ["zoning", "spacing"],
        });
        t
    }

    fn default_counts(self) -> BTreeMap<Category, u32> {
        use Category::*;
        let v: &[(Category, u32)] = match self {
            Archetype::DowntownIntersection => &[(Building, 12), (Tree, 8), (Vehicle, 8), (StreetFurniture, 14), (Prop, 6)],
            Archetype::Residential => &[(Building, 10), (Tree, 14), (Vehicle, 5), (StreetFurniture, 8), (Prop, 4)],
            Archetype::Industrial => &[(Building, 4), (Container, 16), (Vehicle, 6), (StreetFurniture, 4), (Prop, 10)],
            Archetype::CommercialAvenue => &[(Building, 12), (Tree, 6), (Vehicle, 12), (StreetFurniture, 14), (Prop, 4)],
            Archetype::MixedUse => &[(Building, 9), (Tree, 16), (Vehicle, 6), (StreetFurniture, 10), (Prop, 6)],
        };
        v.iter().copied().collect()
    }
}

impl std::str::FromStr for Archetype {
    type Err = BuildError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| BuildError::InvalidSpec(format!("unknown archetype {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadAxis {
    pub from: [f64; 2],
    pub to: [f64; 2],
}

/// Named rectangle on the ground: `park`, `yard`, `plaza` or `no_build`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneRect {
    pub kind: String,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

/// Structured sketch standing in for an image prompt.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayoutHints {
    #[serde(default)]
    pub road_axes: Vec<RoadAxis>,
    #[serde(default)]
    pub zones: Vec<ZoneRect>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DifficultyKnobs {
    /// Road obstacles as a fraction of 100 candidate positions.
    #[serde(default)]
    pub obstacle_density: f64,
    /// Half-range of street-facing yaw jitter, degrees.
    #[serde(default)]
    pub yaw_jitter_deg: Option<f64>,
}

fn default_ground() -> f64 {
    crate::server::DEFAULT_GROUND_SIZE
}

fn default_tod() -> String {
    crate::server::DEFAULT_TIME_OF_DAY.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSpec {
    pub archetype: Archetype,
    /// Absent means the archetype defaults; present with zeros means roads only.
    #[serde(default)]
    pub counts: Option<BTreeMap<Category, u32>>,
    #[serde(default)]
    pub layout_hints: Option<LayoutHints>,
    #[serde(default)]
    pub difficulty: DifficultyKnobs,
    pub seed: u64,
    #[serde(default = "default_ground")]
    pub ground_size: f64,
    #[serde(default = "default_tod")]
    pub time_of_day: String,
    /// Text handed to the judge; generated from the counts when absent.
    #[serde(default)]
    pub request: Option<String>,
}

impl GenerationSpec {
    pub fn new(archetype: Archetype, seed: u64) -> Self {
        Self {
            archetype,
            counts: None,
            layout_hints: None,
            difficulty: DifficultyKnobs::default(),
            seed,
            ground_size: default_ground(),
            time_of_day: default_tod(),
            request: None,
        }
    }

    pub fn effective_counts(&self) -> BTreeMap<Category, u32> {
        self.counts.clone().unwrap_or_else(|| self.archetype.default_counts())
    }

    pub fn validate(&self) -> Result<(), BuildError> {
        if !(self.ground_size.is_finite() && self.ground_size > 2.0 * plan::EDGE_MARGIN + 2000.0) {
            return Err(BuildError::InvalidSpec(format!("ground_size {} too small", self.ground_size)));
        }
        let d = self.difficulty.obstacle_density;
        if !(0.0..=1.0).contains(&d) {
            return Err(BuildError::InvalidSpec(format!("obstacle_density {d} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn request_text(&self) -> String {
        if let Some(r) = &self.request {
            return r.clone();
        }
        let word = |c: Category| match c {
            Category::Building => "buildings",
            Category::Tree => "trees",
            Category::Vehicle => "vehicles",
            Category::StreetFurniture => "furniture pieces",
            Category::Road => "roads",
            Category::Prop => "props",
            Category::Container => "containers",
        };
        let parts: Vec<String> = self
            .effective_counts()
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(c, n)| format!("{n} {}", word(*c)))
            .collect();
        format!("A {} scene with {}", self.archetype.as_str().replace('_', " "), parts.join(", "))
    }

    pub fn from_json(text: &str) -> Result<Self, BuildError> {
        let s: Self = serde_json::from_str(text).map_err(|e| BuildError::InvalidSpec(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible: {constraint} holds {capacity} but {requested} requested")]
    Infeasible {
        constraint: String,
        requested: usize,
        capacity: usize,
    },
    #[error("{stage}: tool {tool} failed [{code}]: {message}")]
    Tool {
        stage: &'static str,
        tool: String,
        code: String,
        message: String,
    },
    #[error("batch {batch}: violations unresolved after revision budget: {detail}")]
    Unresolved { batch: String, detail: String },
    #[error("judge: {0}")]
    Judge(String),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Mutable state that persists across generation episodes.
pub struct GenContext {
    pub catalog: Arc<AssetCatalog>,
    pub judges: Arc<JudgeRegistry>,
    pub judge_name: String,
    pub skills: SkillIndex,
    pub failures: FailureStore,
    pub author: Box<dyn SkillAuthor + Send>,
    /// Index of the next generation episode (1-based).
    pub episode: u64,
    pub output_dir: PathBuf,
    pub raster_size: usize,
}

impl GenContext {
    pub fn new(catalog: Arc<AssetCatalog>, skills: SkillIndex, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            catalog,
            judges: Arc::new(JudgeRegistry::with_builtin()),
            judge_name: RuleJudge::NAME.to_string(),
            skills,
            failures: FailureStore::default(),
            author: Box::new(TemplateAuthor),
            episode: 1,
            output_dir: output_dir.into(),
            raster_size: crate::raster::DEFAULT_SIZE,
        }
    }

    pub fn session(&self) -> Session {
        Session::new(self.catalog.clone(), self.output_dir.clone())
            .with_judges(self.judges.clone(), self.judge_name.clone())
            .with_raster_size(self.raster_size)
    }
}

#[derive(Clone, Debug)]
pub struct GenerationOutput {
    pub scene: SceneGraph,
    pub trace: Vec<TraceRecord>,
    pub verdict: Verdict,
    pub rounds: usize,
    pub promoted: Vec<String>,
    pub episode: u64,
}

impl GenerationOutput {
    /// Writes scene.json, trace.jsonl and verdict.json into `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("scene.json"), self.scene.to_json_pretty())?;
        let mut t = String::new();
        for r in &self.trace {
            t.push_str(&serde_json::to_string(r).expect("trace serializes"));
            t.push('\n');
        }
        fs::write(dir.join("trace.jsonl"), t)?;
        let v = serde_json::json!({
            "status": self.verdict.status,
            "issues": self.verdict.issues,
            "scores": self.verdict.scores,
            "rounds": self.rounds,
            "promoted": self.promoted,
            "episode": self.episode,
        });
        fs::write(dir.join("verdict.json"), serde_json::to_string_pretty(&v).expect("verdict serializes"))?;
        Ok(())
    }
}

/// Runs the whole pipeline for one spec and advances the episode counter.
/// Recurring failure classes are turned into skills before returning.
pub fn generate_scene(spec: &GenerationSpec, ctx: &mut GenContext) -> Result<GenerationOutput, BuildError> {
    spec.validate()?;
    let episode = ctx.episode;
    ctx.episode += 1;
    let mut driver = Driver::new(ctx.session());
    let bundle = acquire_context(&mut driver, &ctx.skills, spec)?;
    let spacing = ctx.skills.spacing_table();
    let plan = plan_layout(spec, &ctx.catalog, &spacing)?;
    construct(&mut driver, &plan)?;
    let (verdict, rounds) = verify_semantic(&mut driver, &spec.request_text())?;

    let mut signatures: Vec<FailureSignature> = Vec::new();
    for r in driver.revisions() {
        let sig = match r.action {
            RevisionAction::Snap { .. } => FailureSignature::new("floating", &format!("rule:check_vertical_support:{}", r.category)),
            _ => FailureSignature::new("collision", &format!("rule:check_collisions:{}", r.category)),
        };
        if !signatures.contains(&sig) {
            signatures.push(sig);
        }
    }
    for (_, v) in driver.rounds() {
        for issue in &v.issues {
            let sig = FailureSignature::new(&issue.metric, &format!("judge:{}", ctx.judge_name));
            if !signatures.contains(&sig) {
                signatures.push(sig);
            }
        }
    }
    let _ = bundle;
    let mut promoted = Vec::new();
    for sig in signatures {
        ctx.failures.record_failure(&sig, episode);
        if ctx.failures.should_promote(&sig, episode, &ctx.skills) {
            let doc = ctx.author.author(&sig, &ctx.skills);
            let name = doc.name.clone();
            ctx.skills.register(doc, Some((sig.clone(), episode)))?;
            driver.note_promotion(&name, &sig);
            promoted.push(name);
        }
    }
    let (scene, trace) = driver.finish();
    Ok(GenerationOutput {
        scene,
        trace,
        verdict,
        rounds,
        promoted,
        episode,
    })
}
