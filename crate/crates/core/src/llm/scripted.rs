//! Deterministic stand-ins for a language model.
//!
//! Each script reads the same prompt text a real model would see and answers
//! in the model output format, so the whole decision stack runs offline.

use std::collections::BTreeMap;
use std::sync::{LazyLock, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{CallKind, PolicyRequest, Role};
use crate::action::Action;
use crate::icrl::DecisionRecord;

pub trait ScriptedPolicy: Send + Sync {
    fn name(&self) -> &str;
    fn respond(&self, req: &PolicyRequest) -> String;
}

/// Formats a decision in the expected output shape with identical sub-scores.
pub fn answer(action: Action, reward: f64, rationale: &str) -> String {
    DecisionRecord {
        action,
        safety_score: reward,
        efficiency_score: reward,
        comfort_score: reward,
        final_reward: reward,
        rationale: rationale.to_string(),
        raw: String::new(),
        fallback: false,
    }
    .render_output()
}

const CRITIQUE: &str = "The previous answer is consistent with the scene; no change is needed.";

fn first_user(req: &PolicyRequest) -> &str {
    req.messages.iter().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str())
}

fn system(req: &PolicyRequest) -> &str {
    req.messages.iter().find(|m| m.role == Role::System).map_or("", |m| m.content.as_str())
}

/// Replays a fixed list of responses in order, wrapping around.
#[derive(Debug)]
pub struct FixedScript {
    responses: Vec<String>,
    cursor: Mutex<usize>,
}

impl FixedScript {
    pub fn new(responses: Vec<String>) -> Self {
        assert!(!responses.is_empty(), "a fixed script needs at least one response");
        Self { responses, cursor: Mutex::new(0) }
    }
}

impl ScriptedPolicy for FixedScript {
    fn name(&self) -> &str {
        "fixed"
    }

    fn respond(&self, _req: &PolicyRequest) -> String {
        let mut i = self.cursor.lock().unwrap();
        let text = self.responses[*i % self.responses.len()].clone();
        *i += 1;
        text
    }
}

/// Wraps a closure.
pub struct FnScript<F>(pub F);

impl<F: Fn(&PolicyRequest) -> String + Send + Sync> ScriptedPolicy for FnScript<F> {
    fn name(&self) -> &str {
        "closure"
    }

    fn respond(&self, req: &PolicyRequest) -> String {
        (self.0)(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeenVehicle {
    pub gap: f64,
    pub ahead: bool,
    pub lane: u32,
    pub speed: f64,
}

/// The fields a scripted driver reads back out of the current-state text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedScene {
    pub lane_count: u32,
    pub lane_index: u32,
    pub speed_limit: f64,
    pub speed: f64,
    pub junction_distance: Option<f64>,
    pub required_lane: Option<u32>,
    pub changing_lanes: bool,
    pub vehicles: Vec<SeenVehicle>,
}

static LANE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"road with (\d+) lanes in your direction, and you are currently driving in the number (\d+) lane")
        .unwrap()
});
static LIMIT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"limit speed of the current lane is ([0-9.]+) m/s").unwrap());
static SPEED_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"speed is ([0-9.]+) m/s").unwrap());
static JUNCTION_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"junction is ([0-9.]+) m ahead\. To follow your route you must be in the number (\d+) lane").unwrap()
});
static GOAL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"number (\d+) lane from the left").unwrap());
static VEHICLE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"Vehicle \d+ is ([0-9.]+) m (ahead|behind) in lane (\d+) at ([0-9.]+) m/s").unwrap()
});

/// Parses the first scene in `text` (everything up to its last-decision line).
pub fn parse_scene(text: &str) -> ParsedScene {
    let end = text
        .find("Last decision:")
        .map_or(text.len(), |i| text[i..].find('\n').map_or(text.len(), |j| i + j));
    let state = &text[..end];
    let num = |re: &Regex, i: usize| re.captures(state).and_then(|c| c[i].parse::<f64>().ok());
    let mut scene = ParsedScene {
        lane_count: num(&LANE_RE, 1).unwrap_or(1.0) as u32,
        lane_index: num(&LANE_RE, 2).unwrap_or(1.0) as u32,
        speed_limit: num(&LIMIT_RE, 1).unwrap_or(13.89),
        speed: num(&SPEED_RE, 1).unwrap_or(0.0),
        junction_distance: num(&JUNCTION_RE, 1),
        required_lane: num(&JUNCTION_RE, 2).map(|x| x as u32),
        changing_lanes: state.contains("currently changing lanes"),
        vehicles: vec![],
    };
    scene.vehicles = VEHICLE_RE
        .captures_iter(state)
        .map(|c| SeenVehicle {
            gap: c[1].parse().unwrap_or(0.0),
            ahead: &c[2] == "ahead",
            lane: c[3].parse().unwrap_or(0),
            speed: c[4].parse().unwrap_or(0.0),
        })
        .collect();
    scene
}

/// Drives like a careful human: keeps a safe headway, moves toward the
/// required lane early when the neighbouring lane is clear, and otherwise
/// holds the speed limit.
#[derive(Debug, Default)]
pub struct ExpertScript {
    /// Minimum center distance (m) to vehicles in the target lane before changing lanes.
    pub lane_change_clearance: f64,
    /// Lane changes start only once the junction is within this distance; `None` means immediately.
    pub merge_trigger: Option<f64>,
}

impl ExpertScript {
    pub fn new() -> Self {
        Self { lane_change_clearance: 18.0, merge_trigger: None }
    }

    /// Waits until the junction is `trigger` meters away before merging.
    pub fn too_late(trigger: f64) -> Self {
        Self { lane_change_clearance: 18.0, merge_trigger: Some(trigger) }
    }

    fn lane_clear(&self, scene: &ParsedScene, lane: u32) -> bool {
        scene.vehicles.iter().filter(|v| v.lane == lane).all(|v| {
            let closing_from_behind = !v.ahead && v.speed > scene.speed && v.gap < 2.0 * self.lane_change_clearance;
            v.gap >= self.lane_change_clearance && !closing_from_behind
        })
    }

    pub fn choose(&self, scene: &ParsedScene, goal_lane: u32) -> (Action, &'static str) {
        let leader = scene
            .vehicles
            .iter()
            .filter(|v| v.ahead && v.lane == scene.lane_index)
            .min_by(|a, b| a.gap.total_cmp(&b.gap));
        if let Some(l) = leader {
            let bumper = l.gap - 4.5;
            let closing = scene.speed - l.speed;
            let ttc = if closing > 0.0 { bumper / closing } else { f64::INFINITY };
            if ttc < 6.0 || bumper < 1.2 * scene.speed + 4.0 {
                return (Action::Decelerate, "The vehicle ahead is close, so slowing down keeps a safe gap.");
            }
        }
        if scene.changing_lanes {
            return (Action::Idle, "A lane change is in progress; holding speed until it completes.");
        }
        let target = scene.required_lane.unwrap_or(goal_lane);
        let may_merge = match self.merge_trigger {
            None => true,
            Some(t) => scene.junction_distance.is_some_and(|d| d <= t),
        };
        if may_merge && scene.lane_index > target && self.lane_clear(scene, scene.lane_index - 1) {
            return (Action::TurnLeft, "The route needs a lane further left and that lane is clear.");
        }
        if may_merge && scene.lane_index < target && self.lane_clear(scene, scene.lane_index + 1) {
            return (Action::TurnRight, "The route needs a lane further right and that lane is clear.");
        }
        let headroom = leader.is_none_or(|l| l.gap - 4.5 > 2.5 * scene.speed + 10.0);
        if scene.speed <= scene.speed_limit - 1.0 && headroom {
            (Action::Accelerate, "The road ahead is free and the speed is below the limit.")
        } else {
            (Action::Idle, "The current speed is appropriate for the road.")
        }
    }
}

impl ScriptedPolicy for ExpertScript {
    fn name(&self) -> &str {
        if self.merge_trigger.is_some() {
            "too-late-merge"
        } else {
            "expert"
        }
    }

    fn respond(&self, req: &PolicyRequest) -> String {
        if req.kind == CallKind::Critique {
            return CRITIQUE.to_string();
        }
        let scene = parse_scene(first_user(req));
        let goal_lane = GOAL_RE
            .captures(system(req))
            .and_then(|c| c[1].parse().ok())
            .unwrap_or(scene.lane_index);
        let (action, why) = self.choose(&scene, goal_lane);
        answer(action, 0.9, why)
    }
}

/// Answers with the same action every time.
#[derive(Debug)]
pub struct ConstantScript(pub Action);

impl ScriptedPolicy for ConstantScript {
    fn name(&self) -> &str {
        "constant"
    }

    fn respond(&self, req: &PolicyRequest) -> String {
        if req.kind == CallKind::Critique {
            return CRITIQUE.to_string();
        }
        answer(self.0, 1.0, "Keeping the same behaviour.")
    }
}

static EXPERIENCE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"was (Accelerate|Decelerate|Idle|Turn Left|Turn Right) with a reward of ([0-9]*\.?[0-9]+)").unwrap()
});

/// `(action, reward)` pairs in the order they appear in a rendered context.
pub fn experience_pairs(text: &str) -> Vec<(Action, f64)> {
    EXPERIENCE_RE
        .captures_iter(text)
        .filter_map(|c| Some((Action::find_in(&c[1])?, c[2].parse().ok()?)))
        .collect()
}

/// Per-action sample means; untried actions are absent.
pub fn action_means(pairs: &[(Action, f64)]) -> BTreeMap<Action, f64> {
    let mut sums: BTreeMap<Action, (f64, u32)> = BTreeMap::new();
    for (a, r) in pairs {
        let e = sums.entry(*a).or_default();
        e.0 += r;
        e.1 += 1;
    }
    sums.into_iter().map(|(a, (s, n))| (a, s / n as f64)).collect()
}

/// A minimal in-context learner: ε-greedy over the sample means it reads
/// from the rewarded actions in its prompt. Untried actions are valued at 0
/// and ties are broken uniformly at random.
#[derive(Debug)]
pub struct LearnerScript {
    pub epsilon: f64,
    rng: Mutex<ChaCha8Rng>,
}

impl LearnerScript {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&epsilon), "epsilon must be a probability");
        Self { epsilon, rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn choose(&self, means: &BTreeMap<Action, f64>) -> Action {
        let mut rng = self.rng.lock().unwrap();
        if rng.random::<f64>() < self.epsilon {
            return Action::MENU_ORDER[rng.random_range(0..Action::MENU_ORDER.len())];
        }
        let value = |a: &Action| means.get(a).copied().unwrap_or(0.0);
        let best = Action::MENU_ORDER.iter().map(value).fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<Action> = Action::MENU_ORDER.into_iter().filter(|a| value(a) == best).collect();
        ties[rng.random_range(0..ties.len())]
    }
}

impl ScriptedPolicy for LearnerScript {
    fn name(&self) -> &str {
        "learner"
    }

    fn respond(&self, req: &PolicyRequest) -> String {
        if req.kind == CallKind::Critique {
            return CRITIQUE.to_string();
        }
        let means = action_means(&experience_pairs(first_user(req)));
        let action = self.choose(&means);
        let estimate = means.get(&action).copied().unwrap_or(0.5);
        answer(action, estimate, "Choosing by the average reward each action earned so far.")
    }
}
