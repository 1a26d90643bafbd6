use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::failures::{FailureCategory, FailureMode};
use super::{free_toward, greedy_policy, surroundings, History, Policy, Surroundings, Trajectory, ALIGN_DEG, GREEDY_STOP_M};
use crate::env::{Action, Observation, SUCCESS_THRESHOLD_CM};
use crate::nav::Episode;

pub const RULE_CAP: usize = 30;
/// Rules idle for this many episodes are pruned.
pub const PRUNE_AFTER: usize = 20;
/// Width of the distance bands synthesized rules are scoped to, metres.
pub const BAND_M: f64 = 10.0;
/// Bands at or beyond this index are merged into one open-ended band.
pub const MAX_BAND: u32 = 3;
/// Turns in a quarter turn at 15 degrees per turn.
const QUARTER: usize = 6;
const REVISIT_WINDOW: usize = 10;
/// Blockages at least this wide (cells, narrower side) call for wall following.
pub const WIDE_SPAN: u32 = 4;
pub const FOLLOW_STEPS: u32 = 150;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "when", content = "value", rename_all = "snake_case")]
pub enum Predicate {
    /// |bearing| ≤ v degrees.
    BearingWithin(f64),
    /// |bearing| > v degrees.
    BearingBeyond(f64),
    /// distance < v metres.
    DistanceBelow(f64),
    /// distance ≥ v metres.
    DistanceAtLeast(f64),
    /// Current cell entered at least v times in the last ten steps.
    RevisitsAtLeast(u32),
    ForwardFree(bool),
    /// The cell ahead was bumped or turned away from at least v times.
    ContactsAtLeast(u32),
    /// Narrower side of the blockage ahead spans at least v cells.
    SpanAtLeast(u32),
    /// Narrower side of the blockage ahead spans fewer than v cells.
    SpanBelow(u32),
}

/// Inputs the predicates read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Features {
    pub bearing: f64,
    pub distance: f64,
    pub revisits: u32,
    pub surroundings: Surroundings,
    pub contacts: u32,
}

impl Features {
    pub fn new(obs: &Observation, history: &History) -> Self {
        Self {
            bearing: obs.bearing,
            distance: obs.distance,
            revisits: history.revisits(REVISIT_WINDOW) as u32,
            surroundings: surroundings(obs),
            contacts: history.contacts_ahead() as u32,
        }
    }
}

impl Features {
    pub fn span(&self) -> u32 {
        self.surroundings.blocked_left.min(self.surroundings.blocked_right) as u32
    }
}

impl Predicate {
    pub fn holds(&self, f: &Features) -> bool {
        match *self {
            Predicate::BearingWithin(v) => f.bearing.abs() <= v,
            Predicate::BearingBeyond(v) => f.bearing.abs() > v,
            Predicate::DistanceBelow(v) => f.distance < v,
            Predicate::DistanceAtLeast(v) => f.distance >= v,
            Predicate::RevisitsAtLeast(v) => f.revisits >= v,
            Predicate::ForwardFree(v) => f.surroundings.forward_free == v,
            Predicate::ContactsAtLeast(v) => f.contacts >= v,
            Predicate::SpanAtLeast(v) => f.span() >= v,
            Predicate::SpanBelow(v) => f.span() < v,
        }
    }
}

/// Conjunction of predicates; empty means always.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Condition(pub Vec<Predicate>);

impl Condition {
    pub fn holds(&self, f: &Features) -> bool {
        self.0.iter().all(|p| p.holds(f))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "do", rename_all = "snake_case")]
pub enum Directive {
    Act { action: Action },
    Macro { actions: Vec<Action> },
    /// Quarter turn toward the narrower side of the obstacle ahead, `forward`
    /// steps, quarter turn back.
    Detour { forward: u32 },
    /// Keep the obstacle on one side until the goal is ahead, clear and closer
    /// than at the first contact, or `max_steps` pass.
    FollowWall { max_steps: u32 },
}

impl Directive {
    pub fn expand(&self, s: &Surroundings) -> Vec<Action> {
        match self {
            Directive::FollowWall { .. } => vec![away_turn(s)],
            Directive::Act { action } => vec![*action],
            Directive::Macro { actions } => actions.clone(),
            Directive::Detour { forward } => {
                let out = away_turn(s);
                let back = opposite(out);
                let mut v = vec![out; QUARTER];
                v.extend(std::iter::repeat_n(Action::MoveForward, *forward as usize));
                v.extend(std::iter::repeat_n(back, QUARTER));
                v
            }
        }
    }
}

/// Turn toward the narrower side of the blockage ahead; right on ties.
fn away_turn(s: &Surroundings) -> Action {
    if s.blocked_left < s.blocked_right {
        Action::TurnLeft
    } else {
        Action::TurnRight
    }
}

fn opposite(a: Action) -> Action {
    match a {
        Action::TurnLeft => Action::TurnRight,
        Action::TurnRight => Action::TurnLeft,
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub condition: Condition,
    pub directive: Directive,
    #[serde(default)]
    pub activation_count: u64,
    /// Episode of the last firing, or of creation before the first firing.
    pub last_active_episode: usize,
}

impl Rule {
    pub fn new(id: impl Into<String>, condition: Vec<Predicate>, directive: Directive, episode: usize) -> Self {
        Self {
            id: id.into(),
            condition: Condition(condition),
            directive,
            activation_count: 0,
            last_active_episode: episode,
        }
    }
}

/// Ordered rules; earlier rules take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleList {
    pub rules: Vec<Rule>,
}

impl RuleList {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rules.iter().any(|r| r.id == id)
    }
}

/// Index of the first rule whose condition holds.
pub fn first_match(rules: &[Rule], f: &Features) -> Option<usize> {
    rules.iter().position(|r| r.condition.holds(f))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub rule: Option<String>,
    /// Rest of a macro, to run on the following steps.
    pub queued: Vec<Action>,
    pub directive: Option<Directive>,
}

/// First matching rule fires and is credited; otherwise `fallback` decides.
pub fn rule_policy_act(
    rules: &mut RuleList,
    obs: &Observation,
    history: &History,
    episode_index: usize,
    fallback: &mut dyn FnMut(&Observation, &History) -> Action,
) -> Decision {
    let f = Features::new(obs, history);
    match first_match(&rules.rules, &f) {
        Some(i) => {
            let r = &mut rules.rules[i];
            r.activation_count += 1;
            r.last_active_episode = r.last_active_episode.max(episode_index);
            let mut actions = r.directive.expand(&f.surroundings);
            let action = actions.remove(0);
            Decision {
                action,
                rule: Some(r.id.clone()),
                queued: actions,
                directive: Some(r.directive.clone()),
            }
        }
        None => Decision {
            action: fallback(obs, history),
            rule: None,
            queued: Vec::new(),
            directive: None,
        },
    }
}

/// Appends `new_rules` (skipping known ids), prunes idle rules, then drops the
/// newest rules beyond the cap.
pub fn update_rules(mut rules: RuleList, new_rules: Vec<Rule>, episode_index: usize) -> RuleList {
    for r in new_rules {
        if !rules.contains(&r.id) {
            rules.rules.push(r);
        }
    }
    if episode_index >= PRUNE_AFTER {
        let limit = episode_index - PRUNE_AFTER;
        rules.rules.retain(|r| r.last_active_episode > limit);
    }
    rules.rules.truncate(RULE_CAP);
    rules
}

pub trait RuleSynthesizer: Send + Sync {
    fn synthesize(&self, failures: &[FailureMode], trajectory: &Trajectory, current: &RuleList, episode_index: usize)
        -> Vec<Rule>;
}

/// Canned rule per failure category, scoped to the distance band where the
/// failure showed up.
#[derive(Clone, Debug, Default)]
pub struct TemplateSynthesizer;

fn band_of(distance: f64) -> u32 {
    ((distance / BAND_M).floor().max(0.0) as u32).min(MAX_BAND)
}

fn band_predicates(band: u32) -> Vec<Predicate> {
    let mut v = Vec::new();
    if band > 0 {
        v.push(Predicate::DistanceAtLeast(band as f64 * BAND_M));
    }
    if band < MAX_BAND {
        v.push(Predicate::DistanceBelow((band + 1) as f64 * BAND_M));
    }
    v
}

impl RuleSynthesizer for TemplateSynthesizer {
    fn synthesize(&self, failures: &[FailureMode], t: &Trajectory, current: &RuleList, episode_index: usize) -> Vec<Rule> {
        let ticks = &t.history.ticks;
        let mut out: Vec<Rule> = Vec::new();
        for f in failures {
            let at = f.evidence.first().and_then(|&i| ticks.get(i)).or(ticks.last());
            let Some(at) = at else { continue };
            let band = band_of(at.distance);
            let scoped = |mut extra: Vec<Predicate>| {
                extra.extend(band_predicates(band));
                extra
            };
            let rule = match f.category {
                FailureCategory::Loop => Rule::new(
                    format!("loop-escape/b{band}"),
                    scoped(vec![Predicate::RevisitsAtLeast(3)]),
                    Directive::Macro {
                        actions: vec![Action::TurnRight, Action::TurnRight],
                    },
                    episode_index,
                ),
                FailureCategory::GoalProximity => Rule::new(
                    "stop-near-goal",
                    vec![Predicate::DistanceBelow(SUCCESS_THRESHOLD_CM / 100.0)],
                    Directive::Act { action: Action::Stop },
                    episode_index,
                ),
                FailureCategory::Directional => Rule::new(
                    format!("forward-when-aligned/b{band}"),
                    scoped(vec![Predicate::BearingWithin(15.0), Predicate::ForwardFree(true)]),
                    Directive::Act {
                        action: Action::MoveForward,
                    },
                    episode_index,
                ),
                FailureCategory::ObstacleAvoidance => {
                    let s = at.surroundings;
                    let span = s.blocked_left.min(s.blocked_right).max(1) as u32;
                    if span < WIDE_SPAN {
                        Rule::new(
                            format!("detour/b{band}"),
                            scoped(vec![
                                Predicate::ForwardFree(false),
                                Predicate::BearingWithin(ALIGN_DEG),
                                Predicate::SpanBelow(WIDE_SPAN),
                            ]),
                            Directive::Detour { forward: span + 2 },
                            episode_index,
                        )
                    } else {
                        Rule::new(
                            format!("follow-wall/b{band}"),
                            scoped(vec![
                                Predicate::ForwardFree(false),
                                Predicate::BearingWithin(ALIGN_DEG),
                                Predicate::SpanAtLeast(WIDE_SPAN),
                            ]),
                            Directive::FollowWall {
                                max_steps: FOLLOW_STEPS,
                            },
                            episode_index,
                        )
                    }
                }
                FailureCategory::Timeout => Rule::new(
                    format!("widen-forward/b{band}"),
                    scoped(vec![Predicate::BearingWithin(45.0), Predicate::ForwardFree(true)]),
                    Directive::Act {
                        action: Action::MoveForward,
                    },
                    episode_index,
                ),
            };
            let contradicts = current
                .rules
                .iter()
                .chain(&out)
                .any(|r| r.condition == rule.condition && r.directive != rule.directive);
            if !contradicts && !current.contains(&rule.id) && !out.iter().any(|r| r.id == rule.id) {
                out.push(rule);
            }
        }
        out
    }
}

pub fn synthesize_rules(failures: &[FailureMode], trajectory: &Trajectory, current: &RuleList, episode_index: usize) -> Vec<Rule> {
    TemplateSynthesizer.synthesize(failures, trajectory, current, episode_index)
}

/// Merges rule lists used by parallel clones back into `base`: activation
/// counts add up, last-active episodes take the maximum, order follows `base`.
pub fn reduce_rule_lists(base: &RuleList, clones: &[RuleList]) -> RuleList {
    let mut delta: BTreeMap<&str, (u64, usize)> = BTreeMap::new();
    let original: BTreeMap<&str, u64> = base.rules.iter().map(|r| (r.id.as_str(), r.activation_count)).collect();
    for c in clones {
        for r in &c.rules {
            let before = original.get(r.id.as_str()).copied().unwrap_or(0);
            let e = delta.entry(r.id.as_str()).or_insert((0, 0));
            e.0 += r.activation_count.saturating_sub(before);
            e.1 = e.1.max(r.last_active_episode);
        }
    }
    let mut out = base.clone();
    for r in &mut out.rules {
        if let Some((n, last)) = delta.get(r.id.as_str()) {
            r.activation_count += n;
            r.last_active_episode = r.last_active_episode.max(*last);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Follow {
    /// +1 circles with the wall on the right (turning left away from it), -1 mirrored.
    side: f64,
    hit: f64,
    steps: u32,
    max_steps: u32,
    seek_turns: u32,
}

impl Follow {
    /// Next action, or `None` once the leave condition holds.
    fn act(&mut self, obs: &Observation) -> Option<Action> {
        let fwd = surroundings(obs).forward_free;
        if self.steps >= self.max_steps
            || (self.steps > 0 && fwd && obs.bearing.abs() <= ALIGN_DEG && obs.distance < self.hit)
        {
            return None;
        }
        self.steps += 1;
        let (away, toward) = if self.side > 0.0 {
            (Action::TurnLeft, Action::TurnRight)
        } else {
            (Action::TurnRight, Action::TurnLeft)
        };
        let wall = [90.0, 60.0, 45.0].iter().any(|p| !free_toward(obs, -self.side * p));
        Some(if !fwd {
            away
        } else if wall || self.seek_turns >= QUARTER as u32 {
            self.seek_turns = 0;
            Action::MoveForward
        } else {
            self.seek_turns += 1;
            toward
        })
    }
}

/// Rule list over a fallback policy. A fired macro runs to completion, and
/// wall following until it lets go, unless the goal comes within stopping
/// distance.
#[derive(Clone, Debug, Default)]
pub struct RulePolicy {
    pub rules: RuleList,
    pending: VecDeque<Action>,
    pending_rule: Option<String>,
    follow: Option<Follow>,
    last: Option<String>,
    episode_index: usize,
}

impl RulePolicy {
    pub fn new(rules: RuleList) -> Self {
        Self {
            rules,
            ..Default::default()
        }
    }
}

impl Policy for RulePolicy {
    fn name(&self) -> &str {
        "rules"
    }

    fn begin_episode(&mut self, _episode: &Episode, episode_index: usize) {
        self.pending.clear();
        self.pending_rule = None;
        self.follow = None;
        self.last = None;
        self.episode_index = episode_index;
    }

    fn act(&mut self, obs: &Observation, history: &History) -> Action {
        if obs.distance < GREEDY_STOP_M {
            self.pending.clear();
            self.follow = None;
        }
        if let Some(a) = self.pending.pop_front() {
            self.last = self.pending_rule.clone();
            return a;
        }
        if let Some(f) = self.follow.as_mut() {
            match f.act(obs) {
                Some(a) => {
                    self.last = self.pending_rule.clone();
                    return a;
                }
                None => self.follow = None,
            }
        }
        let d = rule_policy_act(&mut self.rules, obs, history, self.episode_index, &mut greedy_policy);
        if let Some(Directive::FollowWall { max_steps }) = d.directive {
            let side = if d.action == Action::TurnLeft { 1.0 } else { -1.0 };
            self.follow = Some(Follow {
                side,
                hit: obs.distance,
                steps: 1,
                max_steps,
                seek_turns: 0,
            });
        }
        self.pending = d.queued.into();
        self.pending_rule = d.rule.clone();
        self.last = d.rule;
        d.action
    }

    fn last_fired(&self) -> Option<&str> {
        self.last.as_deref()
    }
}
