//! Synthetic lane graphs for the two map archetypes used in the experiments:
//! a multilane highway approach that splits at a junction, and a four-way
//! intersection that must be crossed with a left turn.
//!
//! Geometry is 1.5D: every vehicle position is an arc length along a lane plus
//! the lane's index from the left. A fixed lane-center embedding produces
//! Cartesian coordinates for display in the prompt only.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Returned by [`LaneGraph::distance_to_goal`] when the goal can no longer be
/// reached from the queried position.
pub const UNREACHABLE: f64 = f64::INFINITY;

pub const DEFAULT_LANE_WIDTH: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub u32);

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lane#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoadId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JunctionId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Sign of a lateral displacement toward this side (positive is rightward).
    pub fn lateral_sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RoadNetError {
    #[error("invalid map parameters: {0}")]
    InvalidParameters(String),
    #[error("unknown lane {0}")]
    UnknownLane(LaneId),
    #[error("lane graph invariant violated: {0}")]
    Invariant(String),
    #[error("lane graph (de)serialization failed: {0}")]
    Serde(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub road: RoadId,
    /// 1-based, counted from the leftmost lane of the road.
    pub index_from_left: u32,
    pub length: f64,
    pub speed_limit: f64,
    pub successors: Vec<LaneId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub id: RoadId,
    pub name: String,
    /// Lanes ordered left to right.
    pub lanes: Vec<LaneId>,
    /// Set for connector roads that live inside a junction.
    pub junction: Option<JunctionId>,
    /// Display embedding: center of the leftmost lane at arc length zero.
    pub origin: [f64; 2],
    /// Display embedding: heading in radians (y axis points to the right of +x).
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JunctionArm {
    pub name: String,
    pub incoming: Option<RoadId>,
    pub outgoing: Option<RoadId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub id: JunctionId,
    pub name: String,
    pub arms: Vec<JunctionArm>,
    pub speed_cap: f64,
}

impl Junction {
    pub fn incident_road_count(&self) -> usize {
        self.arms.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGraph {
    pub seed: u64,
    pub lane_width: f64,
    pub roads: Vec<Road>,
    pub junctions: Vec<Junction>,
    pub lanes: Vec<Lane>,
}

/// Where the ego has to be, and by when, for the route to count as completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteGoal {
    pub target_lane: LaneId,
    /// Arc length on the target lane at which the goal is reached.
    pub goal_s: f64,
    /// Successor the route continues into after the goal point.
    pub exit_lane: Option<LaneId>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighwayParams {
    pub lanes: u32,
    pub approach_length: f64,
    pub speed_limit: f64,
    pub connector_length: f64,
    pub exit_lanes: u32,
    pub exit_length: f64,
    pub mainline_length: f64,
    pub junction_speed_cap: f64,
    /// Start lane index from the left; defaults to the center lane.
    pub start_lane: Option<u32>,
    pub start_s: f64,
    pub start_speed: f64,
    pub base_vehicle_count: usize,
}

impl Default for HighwayParams {
    fn default() -> Self {
        Self {
            lanes: 5,
            approach_length: 171.476,
            speed_limit: 13.89,
            connector_length: 30.0,
            exit_lanes: 3,
            exit_length: 120.0,
            mainline_length: 120.0,
            junction_speed_cap: 7.0,
            start_lane: None,
            start_s: 5.0,
            start_speed: 10.0,
            base_vehicle_count: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntersectionParams {
    pub lanes_per_approach: u32,
    pub arm_length: f64,
    pub speed_limit: f64,
    pub straight_length: f64,
    pub left_turn_length: f64,
    pub right_turn_length: f64,
    pub junction_speed_cap: f64,
    /// Start lane index from the left; defaults to the rightmost lane.
    pub start_lane: Option<u32>,
    pub start_s: f64,
    pub start_speed: f64,
    pub base_vehicle_count: usize,
}

impl Default for IntersectionParams {
    fn default() -> Self {
        Self {
            lanes_per_approach: 2,
            arm_length: 100.0,
            speed_limit: 13.89,
            straight_length: 20.0,
            left_turn_length: 25.0,
            right_turn_length: 12.0,
            junction_speed_cap: 7.0,
            start_lane: None,
            start_s: 5.0,
            start_speed: 8.0,
            base_vehicle_count: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MapArchetype {
    HighwayJunction(HighwayParams),
    FourWayIntersection(IntersectionParams),
}

impl Default for MapArchetype {
    fn default() -> Self {
        MapArchetype::HighwayJunction(HighwayParams::default())
    }
}

impl MapArchetype {
    pub fn highway() -> Self {
        MapArchetype::HighwayJunction(HighwayParams::default())
    }

    pub fn intersection() -> Self {
        MapArchetype::FourWayIntersection(IntersectionParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            MapArchetype::HighwayJunction(_) => "highway-junction",
            MapArchetype::FourWayIntersection(_) => "four-way-intersection",
        }
    }

    pub fn base_vehicle_count(&self) -> usize {
        match self {
            MapArchetype::HighwayJunction(p) => p.base_vehicle_count,
            MapArchetype::FourWayIntersection(p) => p.base_vehicle_count,
        }
    }

    pub fn validate(&self) -> Result<(), RoadNetError> {
        let bad = |msg: String| Err(RoadNetError::InvalidParameters(msg));
        match self {
            MapArchetype::HighwayJunction(p) => {
                if p.lanes < 5 {
                    return bad(format!("highway approach needs at least 5 lanes, got {}", p.lanes));
                }
                if p.exit_lanes < 1 {
                    return bad("highway exit needs at least one lane".into());
                }
                for (name, v) in [
                    ("approach_length", p.approach_length),
                    ("connector_length", p.connector_length),
                    ("exit_length", p.exit_length),
                    ("mainline_length", p.mainline_length),
                    ("speed_limit", p.speed_limit),
                    ("junction_speed_cap", p.junction_speed_cap),
                ] {
                    if !(v.is_finite() && v > 0.0) {
                        return bad(format!("{name} must be positive, got {v}"));
                    }
                }
                let start = p.start_lane.unwrap_or(p.lanes.div_ceil(2));
                if start < 1 || start > p.lanes {
                    return bad(format!("start lane {start} outside 1..={}", p.lanes));
                }
                if !(0.0..p.approach_length).contains(&p.start_s) || p.start_speed < 0.0 {
                    return bad("ego start state outside the approach road".into());
                }
            }
            MapArchetype::FourWayIntersection(p) => {
                if p.lanes_per_approach < 2 {
                    return bad(format!(
                        "intersection approaches need at least 2 lanes, got {}",
                        p.lanes_per_approach
                    ));
                }
                for (name, v) in [
                    ("arm_length", p.arm_length),
                    ("speed_limit", p.speed_limit),
                    ("straight_length", p.straight_length),
                    ("left_turn_length", p.left_turn_length),
                    ("right_turn_length", p.right_turn_length),
                    ("junction_speed_cap", p.junction_speed_cap),
                ] {
                    if !(v.is_finite() && v > 0.0) {
                        return bad(format!("{name} must be positive, got {v}"));
                    }
                }
                let start = p.start_lane.unwrap_or(p.lanes_per_approach);
                if start < 2 || start > p.lanes_per_approach {
                    return bad(format!(
                        "the left-turn route must start from a right-side lane (2..={}), got {start}",
                        p.lanes_per_approach
                    ));
                }
                if !(0.0..p.arm_length).contains(&p.start_s) || p.start_speed < 0.0 {
                    return bad("ego start state outside the approach arm".into());
                }
            }
        }
        Ok(())
    }

    /// Builds the graph together with the ego start pose and route goal.
    pub fn layout(&self, seed: u64) -> Result<MapLayout, RoadNetError> {
        self.validate()?;
        let layout = match self {
            MapArchetype::HighwayJunction(p) => highway_layout(p, seed),
            MapArchetype::FourWayIntersection(p) => intersection_layout(p, seed),
        };
        layout.graph.validate()?;
        Ok(layout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapLayout {
    pub graph: LaneGraph,
    pub start_lane: LaneId,
    pub start_s: f64,
    pub start_speed: f64,
    pub goal: RouteGoal,
    /// Roads on which background traffic is spawned.
    pub spawn_roads: Vec<RoadId>,
    /// Background vehicle count at 1x density.
    pub base_vehicle_count: usize,
}

/// Builds the lane graph for `archetype`.
///
/// The archetypes are fully parametric, so `seed` is only recorded in the
/// graph; two calls with the same inputs serialize identically.
pub fn build_map(archetype: &MapArchetype, seed: u64) -> Result<LaneGraph, RoadNetError> {
    archetype.layout(seed).map(|l| l.graph)
}

struct GraphBuilder {
    graph: LaneGraph,
}

impl GraphBuilder {
    fn new(seed: u64) -> Self {
        Self {
            graph: LaneGraph {
                seed,
                lane_width: DEFAULT_LANE_WIDTH,
                roads: Vec::new(),
                junctions: Vec::new(),
                lanes: Vec::new(),
            },
        }
    }

    fn road(
        &mut self,
        name: &str,
        lanes: u32,
        length: f64,
        speed_limit: f64,
        origin: [f64; 2],
        heading: f64,
        junction: Option<JunctionId>,
    ) -> RoadId {
        let road_id = RoadId(self.graph.roads.len() as u32);
        let mut lane_ids = Vec::with_capacity(lanes as usize);
        for index in 1..=lanes {
            let id = LaneId(self.graph.lanes.len() as u32);
            self.graph.lanes.push(Lane {
                id,
                road: road_id,
                index_from_left: index,
                length,
                speed_limit,
                successors: Vec::new(),
            });
            lane_ids.push(id);
        }
        self.graph.roads.push(Road {
            id: road_id,
            name: name.to_string(),
            lanes: lane_ids,
            junction,
            origin,
            heading,
        });
        road_id
    }

    fn lane_of(&self, road: RoadId, index_from_left: u32) -> LaneId {
        self.graph.roads[road.0 as usize].lanes[(index_from_left - 1) as usize]
    }

    fn link(&mut self, from: LaneId, to: LaneId) {
        self.graph.lanes[from.0 as usize].successors.push(to);
    }
}

fn highway_layout(p: &HighwayParams, seed: u64) -> MapLayout {
    let mut b = GraphBuilder::new(seed);
    let junction = JunctionId(0);
    // Chosen so lane 4 at s = 8.828 sits at (675.048, 353.907).
    let origin = [666.22, 343.407];
    let approach = b.road("approach", p.lanes, p.approach_length, p.speed_limit, origin, 0.0, None);
    let end_x = origin[0] + p.approach_length;
    let connector = b.road(
        "junction-connector",
        1,
        p.connector_length,
        p.junction_speed_cap,
        [end_x, origin[1]],
        -std::f64::consts::FRAC_PI_6,
        Some(junction),
    );
    let exit = b.road(
        "exit",
        p.exit_lanes,
        p.exit_length,
        p.speed_limit,
        [end_x + p.connector_length, origin[1] - p.connector_length * 0.5],
        0.0,
        None,
    );
    let mainline = b.road("mainline", p.lanes, p.mainline_length, p.speed_limit, [end_x, origin[1]], 0.0, None);

    let connector_lane = b.lane_of(connector, 1);
    for index in 1..=p.lanes {
        let from = b.lane_of(approach, index);
        let straight = b.lane_of(mainline, index);
        b.link(from, straight);
        if index == 1 {
            b.link(from, connector_lane);
        }
    }
    let exit_entry = b.lane_of(exit, 1);
    b.link(connector_lane, exit_entry);

    b.graph.junctions.push(Junction {
        id: junction,
        name: "highway-junction".into(),
        arms: vec![
            JunctionArm { name: "approach".into(), incoming: Some(approach), outgoing: None },
            JunctionArm { name: "mainline".into(), incoming: None, outgoing: Some(mainline) },
            JunctionArm { name: "exit".into(), incoming: None, outgoing: Some(exit) },
        ],
        speed_cap: p.junction_speed_cap,
    });

    let start_index = p.start_lane.unwrap_or(p.lanes.div_ceil(2));
    let target = b.lane_of(approach, 1);
    MapLayout {
        start_lane: b.lane_of(approach, start_index),
        start_s: p.start_s,
        start_speed: p.start_speed,
        goal: RouteGoal {
            target_lane: target,
            goal_s: p.approach_length,
            exit_lane: Some(connector_lane),
            description: "take the exit at the highway junction at the end of this road; \
                          only the number 1 lane from the left leads into the junction"
                .into(),
        },
        spawn_roads: vec![approach],
        base_vehicle_count: p.base_vehicle_count,
        graph: b.graph,
    }
}

fn intersection_layout(p: &IntersectionParams, seed: u64) -> MapLayout {
    use std::f64::consts::{FRAC_PI_2, PI};

    let mut b = GraphBuilder::new(seed);
    let junction = JunctionId(0);
    let n = p.lanes_per_approach;
    let half = p.arm_length + n as f64 * b.graph.lane_width;
    // Arms in counter-clockwise order as seen from above: south, east, north, west.
    // Inbound headings point toward the center at (0, 0).
    let arms = ["south", "east", "north", "west"];
    let inbound_heading = [-FRAC_PI_2, PI, FRAC_PI_2, 0.0];
    let mut inbound = Vec::new();
    let mut outbound = Vec::new();
    for (k, name) in arms.iter().enumerate() {
        let h: f64 = inbound_heading[k];
        let start = [-h.cos() * half, -h.sin() * half];
        inbound.push(b.road(&format!("{name}-inbound"), n, p.arm_length, p.speed_limit, start, h, None));
        let out_h = h + PI;
        let out_start = [
            -h.cos() * (n as f64 * b.graph.lane_width),
            -h.sin() * (n as f64 * b.graph.lane_width),
        ];
        outbound.push(b.road(&format!("{name}-outbound"), n, p.arm_length, p.speed_limit, out_start, out_h, None));
    }

    // For a vehicle arriving from arm k: straight leaves via k+2, left via k+3, right via k+1
    // (arms are listed counter-clockwise, y pointing right of heading).
    for k in 0..4 {
        let straight_arm = (k + 2) % 4;
        let left_arm = (k + 3) % 4;
        let right_arm = (k + 1) % 4;
        let origin = b.graph.roads[inbound[k].0 as usize].origin;
        let h = inbound_heading[k];
        let end = [origin[0] + h.cos() * p.arm_length, origin[1] + h.sin() * p.arm_length];
        for index in 1..=n {
            let from = b.lane_of(inbound[k], index);
            let c = b.road(
                &format!("{}-straight-{index}", arms[k]),
                1,
                p.straight_length,
                p.junction_speed_cap,
                end,
                h,
                Some(junction),
            );
            let c_lane = b.lane_of(c, 1);
            b.link(from, c_lane);
            let to = b.lane_of(outbound[straight_arm], index);
            b.link(c_lane, to);
            if index == 1 {
                let c = b.road(
                    &format!("{}-left", arms[k]),
                    1,
                    p.left_turn_length,
                    p.junction_speed_cap,
                    end,
                    h - FRAC_PI_2 * 0.5,
                    Some(junction),
                );
                let c_lane = b.lane_of(c, 1);
                b.link(from, c_lane);
                let to = b.lane_of(outbound[left_arm], 1);
                b.link(c_lane, to);
            }
            if index == n {
                let c = b.road(
                    &format!("{}-right", arms[k]),
                    1,
                    p.right_turn_length,
                    p.junction_speed_cap,
                    end,
                    h + FRAC_PI_2 * 0.5,
                    Some(junction),
                );
                let c_lane = b.lane_of(c, 1);
                b.link(from, c_lane);
                let to = b.lane_of(outbound[right_arm], n);
                b.link(c_lane, to);
            }
        }
    }

    b.graph.junctions.push(Junction {
        id: junction,
        name: "four-way-intersection".into(),
        arms: (0..4)
            .map(|k| JunctionArm {
                name: arms[k].into(),
                incoming: Some(inbound[k]),
                outgoing: Some(outbound[k]),
            })
            .collect(),
        speed_cap: p.junction_speed_cap,
    });

    let start_index = p.start_lane.unwrap_or(n);
    let target = b.lane_of(inbound[0], 1);
    let left_turn = b.graph.lanes[target.0 as usize]
        .successors
        .iter()
        .copied()
        .find(|l| b.graph.roads[b.graph.lanes[l.0 as usize].road.0 as usize].name.ends_with("-left"));
    MapLayout {
        start_lane: b.lane_of(inbound[0], start_index),
        start_s: p.start_s,
        start_speed: p.start_speed,
        goal: RouteGoal {
            target_lane: target,
            goal_s: p.arm_length,
            exit_lane: left_turn,
            description: "turn left at the four-way intersection at the end of this road; \
                          only the number 1 lane from the left allows the left turn"
                .into(),
        },
        spawn_roads: inbound.clone(),
        base_vehicle_count: p.base_vehicle_count,
        graph: b.graph,
    }
}

impl LaneGraph {
    pub fn lane(&self, id: LaneId) -> Result<&Lane, RoadNetError> {
        self.lanes.get(id.0 as usize).filter(|l| l.id == id).ok_or(RoadNetError::UnknownLane(id))
    }

    pub fn road(&self, id: RoadId) -> &Road {
        &self.roads[id.0 as usize]
    }

    pub fn road_of(&self, lane: LaneId) -> Result<&Road, RoadNetError> {
        Ok(self.road(self.lane(lane)?.road))
    }

    pub fn lane_count(&self, road: RoadId) -> usize {
        self.road(road).lanes.len()
    }

    pub fn adjacent_lane(&self, lane: LaneId, side: Side) -> Result<Option<LaneId>, RoadNetError> {
        let l = self.lane(lane)?;
        let road = self.road(l.road);
        let index = match side {
            Side::Left => l.index_from_left.checked_sub(1),
            Side::Right => Some(l.index_from_left + 1),
        };
        Ok(index
            .filter(|&i| i >= 1 && i as usize <= road.lanes.len())
            .map(|i| road.lanes[(i - 1) as usize]))
    }

    /// Remaining distance along the route to the goal point, or [`UNREACHABLE`].
    ///
    /// Lateral moves within a road are free; longitudinal progress follows
    /// successor links. Once the goal arc length has been passed on the goal
    /// road the goal is unreachable.
    pub fn distance_to_goal(&self, goal: &RouteGoal, lane: LaneId, s: f64) -> Result<f64, RoadNetError> {
        let here = self.lane(lane)?;
        let goal_road = self.lane(goal.target_lane)?.road;
        if here.road == goal_road {
            return Ok(if s <= goal.goal_s { goal.goal_s - s } else { UNREACHABLE });
        }
        // Shortest successor path from the end of this lane to the start of any goal-road lane.
        let mut best = UNREACHABLE;
        let mut visited = BTreeSet::new();
        let mut stack = vec![(lane, (here.length - s).max(0.0))];
        while let Some((id, dist)) = stack.pop() {
            let l = self.lane(id)?;
            for &next in &l.successors {
                let n = self.lane(next)?;
                if n.road == goal_road {
                    best = best.min(dist + goal.goal_s);
                } else if visited.insert(next) {
                    stack.push((next, dist + n.length));
                }
            }
        }
        Ok(best)
    }

    /// Display coordinates of a point `lateral_m` meters right of the lane center.
    pub fn position(&self, lane: LaneId, s: f64, lateral_m: f64) -> Result<[f64; 2], RoadNetError> {
        let l = self.lane(lane)?;
        let road = self.road(l.road);
        let (sin, cos) = road.heading.sin_cos();
        let offset = (l.index_from_left - 1) as f64 * self.lane_width + lateral_m;
        Ok([
            road.origin[0] + s * cos - offset * sin,
            road.origin[1] + s * sin + offset * cos,
        ])
    }

    pub fn validate(&self) -> Result<(), RoadNetError> {
        let bad = |msg: String| Err(RoadNetError::Invariant(msg));
        for (i, lane) in self.lanes.iter().enumerate() {
            if lane.id.0 as usize != i {
                return bad(format!("lane at position {i} has id {}", lane.id.0));
            }
            if !(lane.length > 0.0) || !(lane.speed_limit > 0.0) {
                return bad(format!("{} must have positive length and speed limit", lane.id));
            }
            for s in &lane.successors {
                if self.lane(*s).is_err() {
                    return bad(format!("{} has dangling successor {}", lane.id, s));
                }
            }
            let Some(road) = self.roads.get(lane.road.0 as usize) else {
                return bad(format!("{} refers to a missing road", lane.id));
            };
            let n = road.lanes.len() as u32;
            if lane.index_from_left < 1 || lane.index_from_left > n {
                return bad(format!("{} index {} outside 1..={n}", lane.id, lane.index_from_left));
            }
        }
        for road in &self.roads {
            for (pos, id) in road.lanes.iter().enumerate() {
                let lane = self.lane(*id)?;
                if lane.road != road.id || lane.index_from_left as usize != pos + 1 {
                    return bad(format!("road {} lane order is inconsistent", road.name));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, RoadNetError> {
        serde_json::to_string_pretty(self).map_err(|e| RoadNetError::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, RoadNetError> {
        let graph: LaneGraph = serde_json::from_str(text).map_err(|e| RoadNetError::Serde(e.to_string()))?;
        graph.validate()?;
        Ok(graph)
    }
}
