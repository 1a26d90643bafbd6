use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{is_contact, Trajectory};
use crate::env::{Action, SUCCESS_THRESHOLD_CM};
use crate::nav::Episode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureCategory {
    Directional,
    Loop,
    GoalProximity,
    ObstacleAvoidance,
    Timeout,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 5] = [
        FailureCategory::Directional,
        FailureCategory::Loop,
        FailureCategory::GoalProximity,
        FailureCategory::ObstacleAvoidance,
        FailureCategory::Timeout,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureMode {
    pub category: FailureCategory,
    /// Tick indices supporting the finding.
    pub evidence: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureConfig {
    pub loop_window: usize,
    pub loop_visits: usize,
    /// Turning with the goal this close to straight ahead and a clear path counts as a directional error.
    pub directional_bearing: f64,
    pub contact_repeats: usize,
    /// cm
    pub success_threshold: f64,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self {
            loop_window: 10,
            loop_visits: 3,
            directional_bearing: 15.0,
            contact_repeats: 3,
            success_threshold: SUCCESS_THRESHOLD_CM,
        }
    }
}

/// Classifies what went wrong in a finished trajectory; empty for a clean run.
pub fn extract_failures(t: &Trajectory, _episode: &Episode, cfg: &FailureConfig) -> Vec<FailureMode> {
    let ticks = &t.history.ticks;
    let mut out = Vec::new();

    let mut directional = Vec::new();
    for (i, k) in ticks.iter().enumerate() {
        if matches!(k.action, Some(Action::TurnLeft | Action::TurnRight))
            && k.bearing.abs() <= cfg.directional_bearing
            && k.surroundings.forward_free
        {
            directional.push(i);
        }
    }
    if !directional.is_empty() {
        out.push(FailureMode {
            category: FailureCategory::Directional,
            evidence: directional,
        });
    }

    let entries: Vec<usize> = (0..ticks.len())
        .filter(|&i| i == 0 || ticks[i].cell != ticks[i - 1].cell)
        .collect();
    'outer: for (j, &i) in entries.iter().enumerate() {
        let hits: Vec<usize> = entries[j..]
            .iter()
            .copied()
            .take_while(|&e| e < i + cfg.loop_window)
            .filter(|&e| ticks[e].cell == ticks[i].cell)
            .collect();
        if hits.len() >= cfg.loop_visits {
            out.push(FailureMode {
                category: FailureCategory::Loop,
                evidence: hits,
            });
            break 'outer;
        }
    }

    let stopped = ticks.iter().rposition(|k| k.action == Some(Action::Stop));
    let delta_m = cfg.success_threshold / 100.0;
    let closest = ticks
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.distance.total_cmp(&b.1.distance))
        .map(|(i, k)| (i, k.distance));
    match (stopped, closest) {
        (Some(i), _) if ticks.get(i + 1).is_some_and(|k| k.distance >= delta_m) => out.push(FailureMode {
            category: FailureCategory::GoalProximity,
            evidence: vec![i],
        }),
        (None, Some((i, d))) if d < delta_m => out.push(FailureMode {
            category: FailureCategory::GoalProximity,
            evidence: vec![i],
        }),
        _ => {}
    }

    let mut contacts: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut hit = None;
    for (i, k) in ticks.iter().enumerate() {
        if is_contact(k) {
            let v = contacts.entry(k.ahead).or_default();
            v.push(i);
            if v.len() >= cfg.contact_repeats && hit.is_none() {
                hit = Some(k.ahead);
            }
        }
    }
    if let Some(c) = hit {
        out.push(FailureMode {
            category: FailureCategory::ObstacleAvoidance,
            evidence: contacts.remove(&c).unwrap_or_default(),
        });
    }

    if t.truncated && !t.terminated {
        out.push(FailureMode {
            category: FailureCategory::Timeout,
            evidence: vec![ticks.len().saturating_sub(1)],
        });
    }
    out
}
