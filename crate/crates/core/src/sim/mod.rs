//! Fixed-step traffic dynamics: ego maneuvers from discrete actions, IDM
//! background traffic, and weather-dependent limits.

mod idm;
mod weather;
mod world;

use thiserror::Error;

use crate::road_net::RoadNetError;

pub use idm::{idm_accel, IdmParams};
pub use weather::{WeatherParams, WeatherTable, WeatherTier};
pub use world::{
    apply_action, spawn_world, EgoSample, LaneChange, LastDecision, ManeuverSetpoint, NearbyVehicle, Observation,
    SimConfig, SimEvent, StepRecord, VehicleState, WorldState, EGO_ID,
};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("gap must be positive, got {0}")]
    NonPositiveGap(f64),
    #[error("density multiplier must be 1, 2 or 3, got {0}")]
    InvalidDensity(u32),
    #[error("cannot place {requested} vehicles, the map only has room for {capacity}")]
    CapacityExceeded { requested: usize, capacity: usize },
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Map(#[from] RoadNetError),
}
