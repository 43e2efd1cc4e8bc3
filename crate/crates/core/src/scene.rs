//! Text rendering of observations into prompt sections.

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::sim::{LastDecision, Observation, WeatherTier};

const DEFAULT_TEMPLATES: &str = include_str!("../templates/scene.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentLaneTemplates {
    pub base: String,
    pub changing: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NextLaneTemplates {
    pub too_far: String,
    pub near: String,
    pub unreachable: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoTemplates {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NearbyTemplates {
    pub empty: String,
    pub vehicle: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherTemplates {
    pub clear: String,
    pub slight: String,
    pub moderate: String,
    pub severe: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LastDecisionTemplates {
    pub first: String,
    pub plain: String,
    pub rewarded: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutTemplates {
    pub scene: String,
    pub menu: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTemplates {
    /// Junctions farther than this (m) are not described.
    pub too_far_threshold: f64,
    pub current_lane: CurrentLaneTemplates,
    pub next_lane: NextLaneTemplates,
    pub ego_state: EgoTemplates,
    pub nearby: NearbyTemplates,
    pub weather: WeatherTemplates,
    pub last_decision: LastDecisionTemplates,
    pub layout: LayoutTemplates,
}

impl Default for SceneTemplates {
    fn default() -> Self {
        Self::from_toml(DEFAULT_TEMPLATES).expect("bundled scene templates parse")
    }
}

impl SceneTemplates {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// The six prompt sections describing one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneText {
    pub current_lane: String,
    pub next_lane: String,
    pub ego_state: String,
    pub nearby: String,
    pub weather: String,
    pub last_decision: String,
}

impl SceneText {
    pub fn sections(&self) -> [(&'static str, &str); 6] {
        [
            ("current_lane", &self.current_lane),
            ("next_lane", &self.next_lane),
            ("ego_state", &self.ego_state),
            ("nearby", &self.nearby),
            ("weather", &self.weather),
            ("last_decision", &self.last_decision),
        ]
    }

    pub fn render(&self, templates: &SceneTemplates) -> String {
        self.render_with_last_decision(templates, &self.last_decision)
    }

    /// Full text with the last-decision section swapped for `last_decision`.
    pub fn render_with_last_decision(&self, templates: &SceneTemplates, last_decision: &str) -> String {
        fill(
            &templates.layout.scene,
            &[
                ("current_lane", &self.current_lane),
                ("next_lane", &self.next_lane),
                ("ego_state", &self.ego_state),
                ("nearby", &self.nearby),
                ("weather", &self.weather),
                ("last_decision", last_decision),
            ],
        )
    }
}

/// Replaces each `{key}` in `template`.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// Three decimals, rounding ties to even on the binary value; never prints `-0.000`.
pub fn fmt3(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

/// Map constants: three decimals with trailing zeros dropped (`13.89`, `100`).
pub fn fmt_const(x: f64) -> String {
    let s = fmt3(x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

pub fn fmt_reward(r: f64) -> String {
    format!("{r:.2}")
}

pub fn render_weather(tier: WeatherTier, templates: &SceneTemplates) -> String {
    let w = &templates.weather;
    match tier {
        WeatherTier::Clear => w.clear.clone(),
        WeatherTier::Slight => w.slight.clone(),
        WeatherTier::Moderate => w.moderate.clone(),
        WeatherTier::Severe => w.severe.clone(),
    }
}

pub fn render_last_decision(
    record: Option<(Action, Option<f64>)>,
    include_reward: bool,
    decision_period: f64,
    templates: &SceneTemplates,
) -> String {
    let t = &templates.last_decision;
    let period = fmt_const(decision_period);
    match record {
        None => t.first.clone(),
        Some((action, Some(reward))) if include_reward => fill(
            &t.rewarded,
            &[("period", &period), ("action", action.name()), ("reward", &fmt_reward(reward))],
        ),
        Some((action, _)) => fill(&t.plain, &[("period", &period), ("action", action.name())]),
    }
}

pub fn action_menu(templates: &SceneTemplates) -> &str {
    &templates.layout.menu
}

pub fn render_scene(obs: &Observation, templates: &SceneTemplates) -> SceneText {
    let mut current_lane = fill(
        &templates.current_lane.base,
        &[
            ("lane_count", &obs.lane_count.to_string()),
            ("lane_index", &obs.lane_index.to_string()),
            ("length", &fmt_const(obs.lane_length)),
            ("limit", &fmt_const(obs.speed_limit)),
        ],
    );
    if let Some(lc) = obs.ego.lane_change {
        current_lane.push(' ');
        current_lane.push_str(&fill(&templates.current_lane.changing, &[("side", lc.side.as_str())]));
    }

    let next_lane = match obs.distance_to_goal {
        None => templates.next_lane.unreachable.clone(),
        Some(d) if d > templates.too_far_threshold => templates.next_lane.too_far.clone(),
        Some(d) => fill(
            &templates.next_lane.near,
            &[("distance", &fmt3(d)), ("target", &obs.target_lane_index.to_string())],
        ),
    };

    let ego_state = fill(
        &templates.ego_state.text,
        &[
            ("x", &fmt3(obs.position[0])),
            ("y", &fmt3(obs.position[1])),
            ("speed", &fmt3(obs.ego.v)),
            ("accel", &fmt3(obs.ego.a)),
            ("s", &fmt3(obs.ego.s)),
        ],
    );

    let nearby = if obs.nearby.is_empty() {
        templates.nearby.empty.clone()
    } else {
        obs.nearby
            .iter()
            .map(|n| {
                fill(
                    &templates.nearby.vehicle,
                    &[
                        ("id", &n.id.to_string()),
                        ("gap", &fmt3(n.gap.abs())),
                        ("direction", if n.gap >= 0.0 { "ahead" } else { "behind" }),
                        ("lane", &n.lane_index.to_string()),
                        ("speed", &fmt3(n.speed)),
                    ],
                )
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let last = obs.last_decision.map(|LastDecision { action, reward }| (action, reward));
    SceneText {
        current_lane,
        next_lane,
        ego_state,
        nearby,
        weather: render_weather(obs.weather, templates),
        last_decision: render_last_decision(last, false, obs.decision_period, templates),
    }
}
