use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::failures::{FailureCategory, FailureMode};
use super::Trajectory;
use crate::env::Action;
use crate::nav::Episode;

pub const DISTILL_EVERY: usize = 10;

/// Environment features an L2 record is filed under.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvTags {
    pub density_tier: u8,
    pub length_tier: u8,
    pub archetype: String,
}

impl EnvTags {
    /// Tiers: density below 0.10 / 0.25 / above; length below 10 m / 20 m / above.
    pub fn new(obstacle_density: f64, l_star_cm: f64, archetype: impl Into<String>) -> Self {
        let tier = |v: f64, a: f64, b: f64| if v < a { 0 } else if v < b { 1 } else { 2 };
        Self {
            density_tier: tier(obstacle_density, 0.10, 0.25),
            length_tier: tier(l_star_cm / 100.0, 10.0, 20.0),
            archetype: archetype.into(),
        }
    }

    /// density ×2, length ×1, archetype ×1.
    pub fn similarity(&self, o: &EnvTags) -> u32 {
        2 * (self.density_tier == o.density_tier) as u32
            + (self.length_tier == o.length_tier) as u32
            + (self.archetype == o.archetype) as u32
    }
}

/// Run of identical actions; L1 keeps the last episode in this compressed form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct L1Step {
    pub action: Action,
    pub count: usize,
    pub collisions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L2Record {
    pub episode_index: usize,
    pub episode_id: String,
    pub tags: EnvTags,
    pub success: bool,
    pub steps: usize,
    /// metres
    pub final_d: f64,
    pub failures: Vec<FailureCategory>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub l1: Vec<L1Step>,
    pub l2: Vec<L2Record>,
    pub l3: Vec<String>,
    pub distillations: usize,
}

pub trait Distiller: Send + Sync {
    fn distill(&self, l2: &[L2Record], previous: &[String]) -> Vec<String>;
}

/// Principles ranked by how often each failure category appears in L2.
#[derive(Clone, Debug, Default)]
pub struct FrequencyDistiller;

impl Distiller for FrequencyDistiller {
    fn distill(&self, l2: &[L2Record], _previous: &[String]) -> Vec<String> {
        let mut counts: BTreeMap<FailureCategory, usize> = BTreeMap::new();
        for r in l2 {
            for f in &r.failures {
                *counts.entry(*f).or_default() += 1;
            }
        }
        let mut ranked: Vec<_> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let wins = l2.iter().filter(|r| r.success).count();
        let mut out = vec![format!("success in {wins} of {} episodes", l2.len())];
        out.extend(ranked.into_iter().map(|(c, n)| format!("{c:?} failures in {n} of {} episodes", l2.len())));
        out
    }
}

/// Flushes the episode into L1 and L2; distils L3 on every tenth episode
/// (1-based). Returns whether a distillation ran.
pub fn memory_update(
    store: &mut MemoryStore,
    t: &Trajectory,
    episode: &Episode,
    tags: EnvTags,
    failures: &[FailureMode],
    episode_index: usize,
    distiller: &dyn Distiller,
) -> bool {
    store.l1.clear();
    for k in &t.history.ticks {
        let Some(a) = k.action else { continue };
        match store.l1.last_mut() {
            Some(last) if last.action == a => {
                last.count += 1;
                last.collisions += k.collision as usize;
            }
            _ => store.l1.push(L1Step {
                action: a,
                count: 1,
                collisions: k.collision as usize,
            }),
        }
    }
    store.l2.push(L2Record {
        episode_index,
        episode_id: episode.id.clone(),
        tags,
        success: t.success,
        steps: t.steps(),
        final_d: t.final_d / 100.0,
        failures: failures.iter().map(|f| f.category).collect(),
    });
    if episode_index > 0 && episode_index % DISTILL_EVERY == 0 {
        store.l3 = distiller.distill(&store.l2, &store.l3);
        store.distillations += 1;
        return true;
    }
    false
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub records: Vec<L2Record>,
    pub principles: Vec<String>,
}

/// Top `k` L2 records by tag similarity, newest first among equals, plus L3.
pub fn memory_retrieve(store: &MemoryStore, tags: &EnvTags, k: usize) -> ContextBundle {
    if store.l2.is_empty() {
        return ContextBundle::default();
    }
    let mut idx: Vec<usize> = (0..store.l2.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&store.l2[a], &store.l2[b]);
        tags.similarity(&rb.tags)
            .cmp(&tags.similarity(&ra.tags))
            .then(rb.episode_index.cmp(&ra.episode_index))
            .then(b.cmp(&a))
    });
    ContextBundle {
        records: idx.into_iter().take(k).map(|i| store.l2[i].clone()).collect(),
        principles: store.l3.clone(),
    }
}
