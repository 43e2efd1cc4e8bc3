use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::idm::{idm_accel, IdmParams};
use super::weather::{WeatherParams, WeatherTable, WeatherTier};
use super::SimError;
use crate::action::Action;
use crate::reward;
use crate::road_net::{LaneGraph, LaneId, MapLayout, RoadId, RouteGoal, Side};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Physics step (s).
    pub dt: f64,
    pub vehicle_length: f64,
    /// Hard lower bound on bumper-to-bumper spacing at spawn time.
    pub min_spawn_gap: f64,
    /// Bumper-to-bumper spacing between candidate spawn slots.
    pub spawn_spacing: f64,
    /// No background vehicle spawns this close (center distance) to the ego on its road.
    pub ego_clearance: f64,
    /// Half-length of the target-lane window that must be empty to start a lane change.
    pub lane_change_window: f64,
    /// Enables the gap-acceptance lane-change model for background vehicles.
    pub background_lane_changes: bool,
    pub initial_speed_min_fraction: f64,
    pub initial_speed_max_fraction: f64,
    pub weather: WeatherTable,
    /// Shape parameters for background IDM; speeds and limits come from the lane and weather.
    pub idm: IdmParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            vehicle_length: 4.5,
            min_spawn_gap: 0.5,
            spawn_spacing: 8.0,
            ego_clearance: 15.0,
            lane_change_window: 10.0,
            background_lane_changes: false,
            initial_speed_min_fraction: 0.6,
            initial_speed_max_fraction: 1.0,
            weather: WeatherTable::default(),
            idm: IdmParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.vehicle_length > 0.0) || self.min_spawn_gap < 0.5 || self.spawn_spacing < self.min_spawn_gap {
            return bad("vehicle length must be positive and spawn spacing at least 0.5 m");
        }
        if !(0.0..=self.initial_speed_max_fraction).contains(&self.initial_speed_min_fraction) {
            return bad("initial speed fractions must satisfy 0 <= min <= max");
        }
        self.weather.validate().map_err(SimError::InvalidConfig)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChange {
    pub side: Side,
    pub target: LaneId,
    /// Seconds for the lateral ramp from 0 to 1.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    pub lane: LaneId,
    /// Arc length of the vehicle center along `lane` (m).
    pub s: f64,
    pub v: f64,
    pub a: f64,
    /// Progress of an in-flight lane change, 0..=1.
    pub lateral_offset: f64,
    pub lane_change: Option<LaneChange>,
    pub is_ego: bool,
}

impl VehicleState {
    /// Lanes this vehicle blocks: its own, plus the target of an in-flight lane change.
    pub fn occupied_lanes(&self) -> impl Iterator<Item = LaneId> + '_ {
        std::iter::once(self.lane).chain(self.lane_change.map(|lc| lc.target))
    }

    pub fn occupies(&self, lane: LaneId) -> bool {
        self.lane == lane || self.lane_change.is_some_and(|lc| lc.target == lane)
    }
}

/// Longitudinal and lateral targets produced by the trajectory planner for one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverSetpoint {
    pub accel: f64,
    pub lateral: Option<(Side, f64)>,
}

/// Maps a discrete action onto planner setpoints under the given weather limits.
pub fn apply_action(action: Action, weather: &WeatherParams) -> ManeuverSetpoint {
    match action {
        Action::Accelerate => ManeuverSetpoint { accel: weather.max_accel, lateral: None },
        Action::Decelerate => ManeuverSetpoint { accel: -weather.max_decel, lateral: None },
        Action::Idle => ManeuverSetpoint { accel: 0.0, lateral: None },
        Action::TurnLeft => ManeuverSetpoint {
            accel: 0.0,
            lateral: Some((Side::Left, weather.lane_change_duration)),
        },
        Action::TurnRight => ManeuverSetpoint {
            accel: 0.0,
            lateral: Some((Side::Right, weather.lane_change_duration)),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SimEvent {
    Collision { a: u32, b: u32 },
    GoalReached,
    JunctionMissed { lane: LaneId },
    EpisodeTimeout,
    InvalidAction { requested: Action, reason: String },
    /// The ego ran off the end of a lane with no successor.
    RouteEnded,
}

impl SimEvent {
    pub fn is_terminal_for_ego(&self, ego: u32) -> bool {
        match self {
            SimEvent::Collision { a, b } => *a == ego || *b == ego,
            SimEvent::GoalReached | SimEvent::JunctionMissed { .. } | SimEvent::EpisodeTimeout | SimEvent::RouteEnded => {
                true
            }
            SimEvent::InvalidAction { .. } => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LastDecision {
    pub action: Action,
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearbyVehicle {
    pub id: u32,
    /// Center-to-center distance along the road, positive ahead of the ego.
    pub gap: f64,
    pub lane_index: u32,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ego: VehicleState,
    pub position: [f64; 2],
    pub lane_count: u32,
    pub lane_index: u32,
    pub lane_length: f64,
    pub speed_limit: f64,
    /// `None` when the route goal can no longer be reached.
    pub distance_to_goal: Option<f64>,
    pub target_lane_index: u32,
    pub nearby: Vec<NearbyVehicle>,
    pub weather: WeatherTier,
    pub last_decision: Option<LastDecision>,
    pub decision_period: f64,
}

/// Per-step ego quantities the evaluator needs; stored in the transcript so
/// metrics can be recomputed without the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoSample {
    pub v: f64,
    pub a: f64,
    /// Cumulative lateral displacement from lane changes, rightward positive (m).
    pub lateral_m: f64,
    /// `None` when no leader is closing in.
    pub ttc: Option<f64>,
    /// Mean speed of vehicles inside the perception radius.
    pub perceived_speed: Option<f64>,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub vehicles: Vec<VehicleState>,
    pub events: Vec<SimEvent>,
    pub ego: EgoSample,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub time: f64,
    pub vehicles: Vec<VehicleState>,
    pub weather: WeatherTier,
    pub weather_params: WeatherParams,
    pub seed: u64,
    pub graph: Arc<LaneGraph>,
    pub goal: RouteGoal,
    pub config: Arc<SimConfig>,
    pub time_limit: Option<f64>,
    ego_accel: f64,
    ego_lateral_base: f64,
    crashed: BTreeSet<u32>,
    done: bool,
}

pub const EGO_ID: u32 = 0;

/// Populates the map with the ego and `base × density` background vehicles.
pub fn spawn_world(
    layout: &MapLayout,
    density: u32,
    weather: WeatherTier,
    seed: u64,
    config: Arc<SimConfig>,
) -> Result<WorldState, SimError> {
    if !(1..=3).contains(&density) {
        return Err(SimError::InvalidDensity(density));
    }
    config.validate()?;
    let graph = Arc::new(layout.graph.clone());
    let weather_params = config.weather.get(weather);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let requested = layout.base_vehicle_count * density as usize;

    let len = config.vehicle_length;
    let ego_road = graph.lane(layout.start_lane)?.road;
    let mut slots: Vec<(LaneId, f64)> = Vec::new();
    for road in &layout.spawn_roads {
        for &lane_id in &graph.road(*road).lanes {
            let lane = graph.lane(lane_id)?;
            let mut s = len / 2.0;
            while s + len / 2.0 <= lane.length {
                let near_ego = *road == ego_road && (s - layout.start_s).abs() < config.ego_clearance.max(len + config.min_spawn_gap);
                if !near_ego {
                    slots.push((lane_id, s));
                }
                s += len + config.spawn_spacing;
            }
        }
    }
    if slots.len() < requested {
        return Err(SimError::CapacityExceeded { requested, capacity: slots.len() });
    }
    slots.shuffle(&mut rng);
    slots.truncate(requested);
    slots.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));

    let mut vehicles = vec![VehicleState {
        id: EGO_ID,
        lane: layout.start_lane,
        s: layout.start_s,
        v: layout.start_speed,
        a: 0.0,
        lateral_offset: 0.0,
        lane_change: None,
        is_ego: true,
    }];
    // Slots are sorted front-to-back per lane, so each follower is capped
    // against the vehicle just placed ahead of it.
    let mut ahead: Option<(LaneId, f64, f64)> = None;
    for (i, (lane_id, s)) in slots.into_iter().enumerate() {
        let lane = graph.lane(lane_id)?;
        let frac = rng.random_range(config.initial_speed_min_fraction..=config.initial_speed_max_fraction);
        let mut v = lane.speed_limit * frac;
        if let Some((prev_lane, prev_s, prev_v)) = ahead {
            if prev_lane == lane_id {
                let gap = (prev_s - s - len - config.idm.min_gap).max(0.0);
                v = v.min(prev_v + (2.0 * weather_params.max_decel * gap).sqrt() * 0.5);
            }
        }
        ahead = Some((lane_id, s, v));
        vehicles.push(VehicleState {
            id: i as u32 + 1,
            lane: lane_id,
            s,
            v,
            a: 0.0,
            lateral_offset: 0.0,
            lane_change: None,
            is_ego: false,
        });
    }

    let world = WorldState {
        time: 0.0,
        vehicles,
        weather,
        weather_params,
        seed,
        graph,
        goal: layout.goal.clone(),
        config,
        time_limit: None,
        ego_accel: 0.0,
        ego_lateral_base: 0.0,
        crashed: BTreeSet::new(),
        done: false,
    };
    debug_assert!(world.min_same_lane_gap().is_none_or(|g| g >= world.config.min_spawn_gap));
    Ok(world)
}

impl WorldState {
    pub fn with_time_limit(mut self, limit: f64) -> Self {
        self.time_limit = Some(limit);
        self
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn ego(&self) -> &VehicleState {
        self.vehicles.iter().find(|v| v.is_ego).expect("world always holds the ego")
    }

    fn ego_index(&self) -> usize {
        self.vehicles.iter().position(|v| v.is_ego).expect("world always holds the ego")
    }

    pub fn background_count(&self) -> usize {
        self.vehicles.iter().filter(|v| !v.is_ego).count()
    }

    /// Smallest bumper-to-bumper gap between two vehicles sharing a lane.
    pub fn min_same_lane_gap(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, a) in self.vehicles.iter().enumerate() {
            for b in &self.vehicles[i + 1..] {
                if a.occupied_lanes().any(|l| b.occupies(l)) {
                    let gap = (a.s - b.s).abs() - self.config.vehicle_length;
                    best = Some(best.map_or(gap, |g: f64| g.min(gap)));
                }
            }
        }
        best
    }

    /// Lateral displacement of the ego from its start lane center (rightward positive).
    pub fn ego_lateral_m(&self) -> f64 {
        let ego = self.ego();
        self.ego_lateral_base
            + ego.lane_change.map_or(0.0, |lc| lc.side.lateral_sign() * ego.lateral_offset * self.graph.lane_width)
    }

    /// Advances the world by `dt`. `Some(action)` issues a new ego command;
    /// `None` keeps executing the current one.
    pub fn step(&mut self, action: Option<Action>, dt: f64) -> Vec<SimEvent> {
        let mut events = Vec::new();
        if self.done {
            return events;
        }
        assert!(dt > 0.0, "dt must be positive");

        let crashed = std::mem::take(&mut self.crashed);
        self.vehicles.retain(|v| v.is_ego || !crashed.contains(&v.id));

        if let Some(action) = action {
            self.command_ego(action, &mut events);
        }
        if self.config.background_lane_changes {
            self.background_lane_changes();
        }

        let accels: Vec<f64> = (0..self.vehicles.len()).map(|i| self.target_accel(i)).collect();
        let ego_before = self.ego().clone();
        let mut removed = BTreeSet::new();
        for (i, a_cmd) in accels.into_iter().enumerate() {
            let lane_width = self.graph.lane_width;
            let veh = &mut self.vehicles[i];
            let v_next = (veh.v + a_cmd * dt).max(0.0);
            veh.a = (v_next - veh.v) / dt;
            veh.v = v_next;
            veh.s += v_next * dt;
            if let Some(lc) = veh.lane_change {
                veh.lateral_offset += dt / lc.duration;
                if veh.lateral_offset >= 1.0 - 1e-9 {
                    if veh.is_ego {
                        self.ego_lateral_base += lc.side.lateral_sign() * lane_width;
                    }
                    veh.lane = lc.target;
                    veh.lane_change = None;
                    veh.lateral_offset = 0.0;
                }
            }
        }

        // Goal / junction checks happen before lane transitions so the crossing is seen on the goal road.
        let ego_i = self.ego_index();
        let goal_road = self.graph.lane(self.goal.target_lane).map(|l| l.road).ok();
        let ego_road = self.graph.lane(self.vehicles[ego_i].lane).map(|l| l.road).ok();
        if goal_road.is_some() && goal_road == ego_road {
            let ego = &self.vehicles[ego_i];
            if ego_before.s < self.goal.goal_s && ego.s >= self.goal.goal_s {
                self.settle_lane_change(ego_i);
                let ego = &self.vehicles[ego_i];
                if ego.lane == self.goal.target_lane {
                    events.push(SimEvent::GoalReached);
                } else {
                    events.push(SimEvent::JunctionMissed { lane: ego.lane });
                }
                self.done = true;
            }
        }

        for i in 0..self.vehicles.len() {
            while let Ok(lane) = self.graph.lane(self.vehicles[i].lane) {
                if self.vehicles[i].s <= lane.length {
                    break;
                }
                let (length, successors) = (lane.length, lane.successors.clone());
                self.settle_lane_change(i);
                let veh = &self.vehicles[i];
                if successors.is_empty() {
                    if veh.is_ego {
                        self.vehicles[i].s = length;
                        self.vehicles[i].v = 0.0;
                        events.push(SimEvent::RouteEnded);
                        self.done = true;
                    } else {
                        removed.insert(veh.id);
                    }
                    break;
                }
                let next = self.successor_for(veh, &successors);
                let veh = &mut self.vehicles[i];
                veh.s -= length;
                veh.lane = next;
            }
        }
        self.vehicles.retain(|v| !removed.contains(&v.id));

        let len = self.config.vehicle_length;
        for (i, a) in self.vehicles.iter().enumerate() {
            for b in &self.vehicles[i + 1..] {
                if (a.s - b.s).abs() < len && a.occupied_lanes().any(|l| b.occupies(l)) {
                    let (x, y) = (a.id.min(b.id), a.id.max(b.id));
                    events.push(SimEvent::Collision { a: x, b: y });
                    for v in [a, b] {
                        if v.is_ego {
                            self.done = true;
                        } else {
                            self.crashed.insert(v.id);
                        }
                    }
                }
            }
        }

        self.time = ((self.time + dt) * 1e9).round() / 1e9;
        if !self.done && self.time_limit.is_some_and(|t| self.time >= t - 1e-9) {
            events.push(SimEvent::EpisodeTimeout);
            self.done = true;
        }
        events
    }

    fn command_ego(&mut self, action: Action, events: &mut Vec<SimEvent>) {
        let set = apply_action(action, &self.weather_params);
        self.ego_accel = set.accel;
        let Some((side, duration)) = set.lateral else { return };
        let i = self.ego_index();
        let ego = &self.vehicles[i];
        if let Some(lc) = ego.lane_change {
            if lc.side != side {
                events.push(SimEvent::InvalidAction {
                    requested: action,
                    reason: format!("a lane change to the {} is already in progress", lc.side.as_str()),
                });
            }
            return;
        }
        let target = match self.graph.adjacent_lane(ego.lane, side) {
            Ok(Some(t)) => t,
            _ => {
                events.push(SimEvent::InvalidAction {
                    requested: action,
                    reason: format!("there is no lane to the {}", side.as_str()),
                });
                return;
            }
        };
        let window = self.config.lane_change_window;
        if let Some(blocker) = self
            .vehicles
            .iter()
            .find(|v| !v.is_ego && v.occupies(target) && (v.s - ego.s).abs() < window)
        {
            events.push(SimEvent::InvalidAction {
                requested: action,
                reason: format!("vehicle {} occupies the target lane", blocker.id),
            });
            return;
        }
        let ego = &mut self.vehicles[i];
        ego.lane_change = Some(LaneChange { side, target, duration });
        ego.lateral_offset = 0.0;
    }

    /// Completes a lane change that is at least halfway done, aborts it otherwise.
    fn settle_lane_change(&mut self, i: usize) {
        let lane_width = self.graph.lane_width;
        let veh = &mut self.vehicles[i];
        if let Some(lc) = veh.lane_change.take() {
            if veh.lateral_offset >= 0.5 {
                veh.lane = lc.target;
                if veh.is_ego {
                    self.ego_lateral_base += lc.side.lateral_sign() * lane_width;
                }
            }
            veh.lateral_offset = 0.0;
        }
    }

    fn successor_for(&self, veh: &VehicleState, successors: &[LaneId]) -> LaneId {
        if veh.is_ego {
            if veh.lane == self.goal.target_lane {
                if let Some(exit) = self.goal.exit_lane.filter(|e| successors.contains(e)) {
                    return exit;
                }
            }
            successors[0]
        } else {
            successors[veh.id as usize % successors.len()]
        }
    }

    fn idm_params_for(&self, lane: LaneId) -> IdmParams {
        let limit = self.graph.lane(lane).map(|l| l.speed_limit).unwrap_or(self.config.idm.desired_speed);
        IdmParams {
            desired_speed: limit,
            max_accel: self.weather_params.max_accel,
            max_decel: self.weather_params.max_decel,
            ..self.config.idm
        }
    }

    /// Bumper gap and speed of the nearest vehicle ahead of `i`, looking one lane past the end.
    fn leader_of(&self, i: usize, lanes: &[LaneId]) -> Option<(f64, f64)> {
        let me = &self.vehicles[i];
        let len = self.config.vehicle_length;
        let mut best: Option<(f64, f64)> = None;
        let mut consider = |gap: f64, v: f64| {
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, v));
            }
        };
        for (j, other) in self.vehicles.iter().enumerate() {
            if j == i {
                continue;
            }
            for &lane in lanes {
                if other.occupies(lane) && (other.s > me.s || (other.s == me.s && j > i)) {
                    consider(other.s - me.s - len, other.v);
                }
            }
        }
        if let Ok(lane) = self.graph.lane(me.lane) {
            if !lane.successors.is_empty() {
                let next = self.successor_for(me, &lane.successors);
                for other in &self.vehicles {
                    if other.occupies(next) {
                        consider(lane.length - me.s + other.s - len, other.v);
                    }
                }
            }
        }
        best
    }

    fn target_accel(&self, i: usize) -> f64 {
        let veh = &self.vehicles[i];
        if veh.is_ego {
            return self.ego_accel;
        }
        let lanes: Vec<LaneId> = veh.occupied_lanes().collect();
        let params = self.idm_params_for(veh.lane);
        let (gap, v_lead) = self.leader_of(i, &lanes).unwrap_or((f64::INFINITY, veh.v));
        idm_accel(gap.max(1e-3), veh.v, v_lead, &params).expect("gap is clamped positive")
    }

    fn background_lane_changes(&mut self) {
        let window = self.config.lane_change_window;
        for i in 0..self.vehicles.len() {
            let veh = &self.vehicles[i];
            if veh.is_ego || veh.lane_change.is_some() {
                continue;
            }
            let current = self.target_accel(i);
            if current > -1.0 {
                continue;
            }
            let own_gap = self.leader_of(i, &[veh.lane]).map_or(f64::INFINITY, |(g, _)| g);
            for side in [Side::Left, Side::Right] {
                let Ok(Some(target)) = self.graph.adjacent_lane(veh.lane, side) else { continue };
                let veh = &self.vehicles[i];
                let blocked = self
                    .vehicles
                    .iter()
                    .any(|o| o.id != veh.id && o.occupies(target) && (o.s - veh.s).abs() < window);
                let target_gap = self.leader_of(i, &[target]).map_or(f64::INFINITY, |(g, _)| g);
                if !blocked && target_gap > own_gap + 5.0 {
                    let duration = self.weather_params.lane_change_duration;
                    let veh = &mut self.vehicles[i];
                    veh.lane_change = Some(LaneChange { side, target, duration });
                    veh.lateral_offset = 0.0;
                    break;
                }
            }
        }
    }

    fn road_of(&self, lane: LaneId) -> Option<RoadId> {
        self.graph.lane(lane).ok().map(|l| l.road)
    }

    fn feeds_into(&self, from: RoadId, to: RoadId) -> bool {
        self.graph
            .road(from)
            .lanes
            .iter()
            .filter_map(|l| self.graph.lane(*l).ok())
            .any(|l| l.successors.iter().any(|s| self.road_of(*s) == Some(to)))
    }

    /// Signed center distance from the ego to `other` along the road network,
    /// for vehicles on the ego's road or a directly connected one.
    pub fn relative_gap(&self, other: &VehicleState) -> Option<f64> {
        let ego = self.ego();
        let ego_lane = self.graph.lane(ego.lane).ok()?;
        let other_lane = self.graph.lane(other.lane).ok()?;
        if ego_lane.road == other_lane.road {
            Some(other.s - ego.s)
        } else if self.feeds_into(ego_lane.road, other_lane.road) {
            Some(ego_lane.length - ego.s + other.s)
        } else if self.feeds_into(other_lane.road, ego_lane.road) {
            Some(-(other_lane.length - other.s + ego.s))
        } else {
            None
        }
    }

    pub fn nearby(&self) -> Vec<NearbyVehicle> {
        let radius = self.weather_params.perception_radius;
        let mut out: Vec<NearbyVehicle> = self
            .vehicles
            .iter()
            .filter(|v| !v.is_ego)
            .filter_map(|v| {
                let gap = self.relative_gap(v)?;
                (gap.abs() <= radius).then(|| NearbyVehicle {
                    id: v.id,
                    gap,
                    lane_index: self.graph.lane(v.lane).map(|l| l.index_from_left).unwrap_or(0),
                    speed: v.v,
                })
            })
            .collect();
        out.sort_by(|a, b| a.gap.abs().total_cmp(&b.gap.abs()).then(a.id.cmp(&b.id)));
        out
    }

    pub fn observe(&self, last_decision: Option<LastDecision>, decision_period: f64) -> Result<Observation, SimError> {
        let ego = self.ego().clone();
        let lane = self.graph.lane(ego.lane)?;
        let lane_count = self.graph.lane_count(lane.road) as u32;
        let distance = self.graph.distance_to_goal(&self.goal, ego.lane, ego.s)?;
        let target_index = self.graph.lane(self.goal.target_lane)?.index_from_left;
        let position = self.graph.position(ego.lane, ego.s, self.ego_lateral_m() - self.ego_lateral_base)?;
        Ok(Observation {
            position,
            lane_count,
            lane_index: lane.index_from_left,
            lane_length: lane.length,
            speed_limit: lane.speed_limit,
            distance_to_goal: distance.is_finite().then_some(distance),
            target_lane_index: target_index,
            nearby: self.nearby(),
            weather: self.weather,
            last_decision,
            decision_period,
            ego,
        })
    }

    /// Snapshot of this step for the transcript.
    pub fn record(&self, events: Vec<SimEvent>) -> StepRecord {
        let ego = self.ego();
        let others: Vec<VehicleState> = self.vehicles.iter().filter(|v| !v.is_ego).cloned().collect();
        let ttc = reward::ttc(ego, &others, &self.graph, self.config.vehicle_length);
        let nearby = self.nearby();
        let perceived_speed = (!nearby.is_empty()).then(|| nearby.iter().map(|n| n.speed).sum::<f64>() / nearby.len() as f64);
        StepRecord {
            time: self.time,
            vehicles: self.vehicles.clone(),
            events,
            ego: EgoSample {
                v: ego.v,
                a: ego.a,
                lateral_m: self.ego_lateral_m(),
                ttc: ttc.is_finite().then_some(ttc),
                perceived_speed,
                speed_limit: self.graph.lane(ego.lane).map(|l| l.speed_limit).unwrap_or(0.0),
            },
        }
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string(&(self.time, &self.vehicles)).expect("vehicle states serialize")
    }
}
