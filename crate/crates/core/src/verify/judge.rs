use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::SceneMetricSet;
use crate::scene::Category;
use crate::server::client::NdjsonClient;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge unavailable: {0}")]
    Unavailable(String),
    #[error("judge transport: {0}")]
    Transport(String),
    #[error("judge returned malformed verdict: {0}")]
    Malformed(String),
}

/// 0–10 integer rubric score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RubricScore {
    pub raw: u8,
    pub normalized: f64,
}

impl RubricScore {
    pub fn new(raw: u8) -> Option<Self> {
        (raw <= 10).then(|| Self {
            raw,
            normalized: f64::from(raw) / 10.0,
        })
    }

    /// Rounds a fraction in `[0, 1]` onto the rubric.
    pub fn from_fraction(f: f64) -> Self {
        let raw = (f.clamp(0.0, 1.0) * 10.0).round() as u8;
        Self::new(raw).expect("clamped")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictStatus {
    Pass,
    NeedsImprovement,
    Fail,
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictStatus::Pass => "PASS",
            VerdictStatus::NeedsImprovement => "NEEDS_IMPROVEMENT",
            VerdictStatus::Fail => "FAIL",
        })
    }
}

/// One diagnostic, tagged with the metric it concerns (`COL`, `GRAV`, `CNT`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub metric: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub issues: Vec<Issue>,
    pub scores: BTreeMap<String, RubricScore>,
}

impl Verdict {
    pub fn mentions(&self, metric: &str) -> bool {
        self.issues.iter().any(|i| i.metric == metric)
    }
}

/// What a judge sees: the request, a structured scene digest and rendered views.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub actor_count: usize,
    pub per_category: BTreeMap<Category, usize>,
    pub collision_pairs: usize,
    pub floating: usize,
    pub metrics: SceneMetricSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub request_text: String,
    pub summary: SceneSummary,
    pub screenshots: Vec<PathBuf>,
}

pub trait Judge: Send + Sync {
    fn name(&self) -> &str;
    fn judge(&self, request: &JudgeRequest) -> Result<Verdict, JudgeError>;
}

/// Deterministic judge driven by the rule metrics.
///
/// PASS iff COL ≥ 0.95, GRAV = 1 and CNT ≥ 0.8; FAIL iff COL < 0.5; otherwise
/// NEEDS_IMPROVEMENT. Missing metrics count as satisfied.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleJudge;

impl RuleJudge {
    pub const NAME: &'static str = "rule";
}

impl Judge for RuleJudge {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn judge(&self, request: &JudgeRequest) -> Result<Verdict, JudgeError> {
        let m = &request.summary.metrics;
        let col = m.col.unwrap_or(1.0);
        let grav = m.grav.unwrap_or(1.0);
        let cnt = m.cnt.unwrap_or(1.0);
        let oob = m.oob.unwrap_or(1.0);
        let mut issues = Vec::new();
        if col < 0.95 {
            issues.push(Issue {
                metric: "COL".into(),
                message: format!(
                    "{} colliding pair(s); collision-free rate {col:.2}",
                    request.summary.collision_pairs
                ),
            });
        }
        if grav < 1.0 {
            issues.push(Issue {
                metric: "GRAV".into(),
                message: format!("gravity validity {grav:.2}; some actors are not grounded"),
            });
        }
        if cnt < 0.8 {
            issues.push(Issue {
                metric: "CNT".into(),
                message: format!("requested object counts only {:.0}% satisfied", cnt * 100.0),
            });
        }
        if oob < 1.0 {
            issues.push(Issue {
                metric: "OOB".into(),
                message: format!("in-bounds rate {oob:.2}"),
            });
        }
        let status = if col < 0.5 {
            VerdictStatus::Fail
        } else if col >= 0.95 && grav >= 1.0 && cnt >= 0.8 {
            VerdictStatus::Pass
        } else {
            VerdictStatus::NeedsImprovement
        };
        let mut scores = BTreeMap::new();
        scores.insert("PF".to_string(), RubricScore::from_fraction(cnt));
        scores.insert(
            "LAES".to_string(),
            RubricScore::from_fraction((col + grav + oob) / 3.0),
        );
        Ok(Verdict {
            status,
            issues,
            scores,
        })
    }
}

/// Judge living in another process, reached over the tool-server wire protocol.
/// It receives a `judge_scene` request and must answer with a verdict payload.
#[derive(Clone, Debug)]
pub struct ExternalJudge {
    name: String,
    address: String,
}

impl ExternalJudge {
    pub fn new(name: impl Into<String>, address: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            address: address.into(),
        }
    }
}

impl Judge for ExternalJudge {
    fn name(&self) -> &str {
        &self.name
    }

    fn judge(&self, request: &JudgeRequest) -> Result<Verdict, JudgeError> {
        let mut client = NdjsonClient::connect(&self.address)
            .map_err(|e| JudgeError::Unavailable(format!("{}: {e}", self.address)))?;
        let args = serde_json::to_value(request).map_err(|e| JudgeError::Transport(e.to_string()))?;
        let resp = client
            .call("judge_scene", args)
            .map_err(|e| JudgeError::Transport(e.to_string()))?;
        if !resp.ok {
            let msg = resp.error.map(|e| e.message).unwrap_or_default();
            return Err(JudgeError::Unavailable(msg));
        }
        let payload = resp.payload.unwrap_or_else(|| json!(null));
        serde_json::from_value(payload).map_err(|e| JudgeError::Malformed(e.to_string()))
    }
}

/// Named judges. Lookups of unregistered names fail loudly.
#[derive(Clone, Default)]
pub struct JudgeRegistry {
    judges: BTreeMap<String, Arc<dyn Judge>>,
}

impl JudgeRegistry {
    pub fn with_builtin() -> Self {
        let mut r = Self::default();
        r.register(Arc::new(RuleJudge));
        r
    }

    pub fn register(&mut self, judge: Arc<dyn Judge>) {
        self.judges.insert(judge.name().to_string(), judge);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Judge>, JudgeError> {
        self.judges
            .get(name)
            .cloned()
            .ok_or_else(|| JudgeError::Unavailable(name.to_string()))
    }

    pub fn judge_scene(&self, name: &str, request: &JudgeRequest) -> Result<Verdict, JudgeError> {
        self.get(name)?.judge(request)
    }
}

impl fmt::Debug for JudgeRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.judges.keys()).finish()
    }
}
