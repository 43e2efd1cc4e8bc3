//! Intelligent Driver Model for background traffic.

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    /// Desired speed v0 (m/s).
    pub desired_speed: f64,
    /// Maximum acceleration a (m/s²).
    pub max_accel: f64,
    /// Comfortable deceleration b (m/s²).
    pub comfortable_decel: f64,
    /// Hard braking limit; the output is clipped at its negative.
    pub max_decel: f64,
    /// Jam distance s0 (m).
    pub min_gap: f64,
    /// Safe time headway T (s).
    pub time_headway: f64,
    pub exponent: i32,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 13.89,
            max_accel: 2.0,
            comfortable_decel: 2.0,
            max_decel: 4.0,
            min_gap: 2.0,
            time_headway: 1.5,
            exponent: 4,
        }
    }
}

/// IDM acceleration toward a leader `gap` meters ahead (bumper to bumper).
///
/// Pass `f64::INFINITY` for a free road. The result is clipped to
/// `[-max_decel, max_accel]`.
pub fn idm_accel(gap: f64, v: f64, v_lead: f64, p: &IdmParams) -> Result<f64, SimError> {
    if !(gap > 0.0) {
        return Err(SimError::NonPositiveGap(gap));
    }
    let free = p.max_accel * (1.0 - (v / p.desired_speed).powi(p.exponent));
    let interaction = if gap.is_finite() {
        let dv = v - v_lead;
        let desired = p.min_gap + (v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfortable_decel).sqrt())).max(0.0);
        p.max_accel * (desired / gap).powi(2)
    } else {
        0.0
    };
    Ok((free - interaction).clamp(-p.max_decel, p.max_accel))
}
