//! Safety, comfort and efficiency scores computed from simulation traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::road_net::LaneGraph;
use crate::sim::{SimEvent, StepRecord, VehicleState, EGO_ID};

/// Floor on the closing speed so a vanishing relative speed never divides by zero.
pub const MIN_CLOSING_SPEED: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("comfort series must be non-empty")]
    EmptySeries,
    #[error("comfort series lengths differ")]
    LengthMismatch,
    #[error("trace has no terminal event")]
    IncompleteTrace,
    #[error("reward window is empty")]
    EmptyWindow,
    #[error("invalid reward parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyParams {
    /// Seconds; TTC at or above this scores 1.
    pub tau_threshold: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self { tau_threshold: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComfortCaps {
    pub lat_accel: f64,
    pub lat_jerk: f64,
    pub long_accel: f64,
    pub long_jerk: f64,
}

impl Default for ComfortCaps {
    fn default() -> Self {
        Self { lat_accel: 2.0, lat_jerk: 2.0, long_accel: 3.0, long_jerk: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    pub safety: SafetyParams,
    pub comfort: ComfortCaps,
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), RewardError> {
        let c = &self.comfort;
        if !(self.safety.tau_threshold > 0.0) {
            return Err(RewardError::InvalidParams("tau_threshold must be positive".into()));
        }
        if [c.lat_accel, c.lat_jerk, c.long_accel, c.long_jerk].iter().any(|x| !(*x > 0.0)) {
            return Err(RewardError::InvalidParams("comfort caps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComfortSignals {
    pub lat_accel: Vec<f64>,
    pub lat_jerk: Vec<f64>,
    pub long_accel: Vec<f64>,
    pub long_jerk: Vec<f64>,
    pub caps: ComfortCaps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencySignals {
    pub v_e: Vec<f64>,
    pub v_limit: f64,
    /// Mean speed of perceived vehicles, when any were perceived.
    pub v_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub r_s: f64,
    pub r_c: f64,
    pub r_e: f64,
    pub completed: bool,
    pub collision: bool,
    pub junction_missed: bool,
    /// Sum of per-decision evaluator rewards.
    pub return_j: f64,
}

/// Per-conflict TTC: `gap / max(closing speed, ε)`, or infinity when not closing.
pub fn ttc_from_gap(gap: f64, v_e: f64, v_lead: f64) -> f64 {
    let closing = v_e - v_lead;
    if closing <= 0.0 {
        f64::INFINITY
    } else {
        gap.max(0.0) / closing.max(MIN_CLOSING_SPEED)
    }
}

/// Minimum TTC over `(gap, v_e, v_lead)` conflicts.
pub fn ttc_from_gaps(conflicts: &[(f64, f64, f64)]) -> f64 {
    conflicts
        .iter()
        .map(|&(g, ve, vl)| ttc_from_gap(g, ve, vl))
        .fold(f64::INFINITY, f64::min)
}

/// Time to conflict with the nearest closing leader on any lane the ego
/// occupies, including the lanes its current lane feeds into.
pub fn ttc(ego: &VehicleState, others: &[VehicleState], graph: &LaneGraph, vehicle_length: f64) -> f64 {
    let mut conflicts = Vec::new();
    let lanes: Vec<_> = ego.occupied_lanes().collect();
    for other in others.iter().filter(|o| o.id != ego.id) {
        if lanes.iter().any(|l| other.occupies(*l)) && other.s >= ego.s {
            conflicts.push((other.s - ego.s - vehicle_length, ego.v, other.v));
        }
    }
    if let Ok(lane) = graph.lane(ego.lane) {
        for other in others.iter().filter(|o| o.id != ego.id) {
            if lane.successors.iter().any(|l| other.occupies(*l)) {
                conflicts.push((lane.length - ego.s + other.s - vehicle_length, ego.v, other.v));
            }
        }
    }
    ttc_from_gaps(&conflicts)
}

pub fn safety_score(tau_e: f64, params: &SafetyParams) -> f64 {
    if tau_e >= params.tau_threshold {
        1.0
    } else {
        (tau_e / params.tau_threshold).max(0.0)
    }
}

/// Running mean; exact for constant series, unlike sum-then-divide.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().enumerate().fold(0.0, |m, (i, x)| m + (x - m) / (i + 1) as f64)
}

fn mean_abs(xs: &[f64]) -> f64 {
    xs.iter().enumerate().fold(0.0, |m, (i, x)| m + (x.abs() - m) / (i + 1) as f64)
}

fn sub_score(series: &[f64], cap: f64) -> f64 {
    (1.0 - mean_abs(series) / cap).clamp(0.0, 1.0)
}

pub fn comfort_score(sig: &ComfortSignals) -> Result<f64, RewardError> {
    let n = sig.long_accel.len();
    if [&sig.lat_accel, &sig.lat_jerk, &sig.long_jerk].iter().any(|s| s.len() != n) {
        return Err(RewardError::LengthMismatch);
    }
    if n == 0 {
        return Err(RewardError::EmptySeries);
    }
    let c = &sig.caps;
    let s_xa = sub_score(&sig.lat_accel, c.lat_accel);
    let s_xj = sub_score(&sig.lat_jerk, c.lat_jerk);
    let s_ya = sub_score(&sig.long_accel, c.long_accel);
    let s_yj = sub_score(&sig.long_jerk, c.long_jerk);
    Ok((s_xa + s_xj + s_ya + s_yj) / 4.0)
}

pub fn efficiency_score(sig: &EfficiencySignals, traffic_present: bool) -> f64 {
    let v_star = match (traffic_present, sig.v_avg) {
        (true, Some(avg)) => avg,
        _ => sig.v_limit,
    };
    let v_mean = if sig.v_e.is_empty() { 0.0 } else { mean(&sig.v_e) };
    if v_mean >= v_star {
        1.0
    } else {
        (v_mean / v_star).clamp(0.0, 1.0)
    }
}

/// Numerical derivative: central differences inside, one-sided at the ends.
pub fn gradient(xs: &[f64], dt: f64) -> Vec<f64> {
    let n = xs.len();
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    (xs[1] - xs[0]) / dt
                } else if i == n - 1 {
                    (xs[n - 1] - xs[n - 2]) / dt
                } else {
                    (xs[i + 1] - xs[i - 1]) / (2.0 * dt)
                }
            })
            .collect(),
    }
}

fn trace_dt(steps: &[StepRecord]) -> f64 {
    match steps {
        [a, b, ..] if b.time > a.time => b.time - a.time,
        _ => 0.1,
    }
}

pub fn comfort_signals(steps: &[StepRecord], caps: ComfortCaps) -> ComfortSignals {
    let dt = trace_dt(steps);
    let long_accel: Vec<f64> = steps.iter().map(|r| r.ego.a).collect();
    let lateral: Vec<f64> = steps.iter().map(|r| r.ego.lateral_m).collect();
    let lat_v = gradient(&lateral, dt);
    let lat_accel = gradient(&lat_v, dt);
    ComfortSignals {
        lat_jerk: gradient(&lat_accel, dt),
        lat_accel,
        long_jerk: gradient(&long_accel, dt),
        long_accel,
        caps,
    }
}

pub fn efficiency_signals(steps: &[StepRecord]) -> (EfficiencySignals, bool) {
    let perceived: Vec<f64> = steps.iter().filter_map(|r| r.ego.perceived_speed).collect();
    let traffic_present = !perceived.is_empty();
    let sig = EfficiencySignals {
        v_e: steps.iter().map(|r| r.ego.v).collect(),
        v_limit: steps.first().map_or(1.0, |r| r.ego.speed_limit),
        v_avg: traffic_present.then(|| mean(&perceived)),
    };
    (sig, traffic_present)
}

fn ego_collided(steps: &[StepRecord]) -> bool {
    steps
        .iter()
        .flat_map(|r| &r.events)
        .any(|e| matches!(e, SimEvent::Collision { a, b } if *a == EGO_ID || *b == EGO_ID))
}

/// `(r_s, r_c, r_e)` over a slice of step records.
pub fn trace_scores(steps: &[StepRecord], params: &RewardParams) -> Result<(f64, f64, f64), RewardError> {
    if steps.is_empty() {
        return Err(RewardError::EmptyWindow);
    }
    let min_ttc = steps.iter().filter_map(|r| r.ego.ttc).fold(f64::INFINITY, f64::min);
    let r_s = if ego_collided(steps) { 0.0 } else { safety_score(min_ttc, &params.safety) };
    let r_c = comfort_score(&comfort_signals(steps, params.comfort))?;
    let (eff, traffic) = efficiency_signals(steps);
    let r_e = efficiency_score(&eff, traffic);
    Ok((r_s, r_c, r_e))
}

pub fn combine(r_s: f64, r_c: f64, r_e: f64) -> f64 {
    (r_s + r_c + r_e) / 3.0
}

/// Evaluator reward for one decision: the mean of the three scores over its window.
pub fn step_reward(window: &[StepRecord], params: &RewardParams) -> Result<f64, RewardError> {
    let (r_s, r_c, r_e) = trace_scores(window, params)?;
    Ok(combine(r_s, r_c, r_e))
}

pub fn episode_metrics(
    steps: &[StepRecord],
    evaluator_rewards: &[f64],
    params: &RewardParams,
) -> Result<EpisodeMetrics, RewardError> {
    let terminal = steps
        .iter()
        .flat_map(|r| &r.events)
        .any(|e| e.is_terminal_for_ego(EGO_ID));
    if !terminal {
        return Err(RewardError::IncompleteTrace);
    }
    let (r_s, r_c, r_e) = trace_scores(steps, params)?;
    let events = || steps.iter().flat_map(|r| &r.events);
    Ok(EpisodeMetrics {
        r_s,
        r_c,
        r_e,
        completed: events().any(|e| *e == SimEvent::GoalReached),
        collision: ego_collided(steps),
        junction_missed: events().any(|e| matches!(e, SimEvent::JunctionMissed { .. })),
        return_j: evaluator_rewards.iter().sum(),
    })
}
