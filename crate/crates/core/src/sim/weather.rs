use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherTier {
    Clear,
    Slight,
    Moderate,
    Severe,
}

impl WeatherTier {
    pub const ALL: [WeatherTier; 4] = [
        WeatherTier::Clear,
        WeatherTier::Slight,
        WeatherTier::Moderate,
        WeatherTier::Severe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeatherTier::Clear => "clear",
            WeatherTier::Slight => "slight",
            WeatherTier::Moderate => "moderate",
            WeatherTier::Severe => "severe",
        }
    }

    /// Row label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            WeatherTier::Clear => "Clear Weather",
            WeatherTier::Slight => "Slightly Inclement Weather",
            WeatherTier::Moderate => "Moderately Inclement Weather",
            WeatherTier::Severe => "Severely Inclement Weather",
        }
    }
}

impl fmt::Display for WeatherTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeatherTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clear" => Ok(WeatherTier::Clear),
            "slight" | "slightly" => Ok(WeatherTier::Slight),
            "moderate" | "moderately" => Ok(WeatherTier::Moderate),
            "severe" | "severely" => Ok(WeatherTier::Severe),
            other => Err(format!("unknown weather tier {other:?}")),
        }
    }
}

/// Dynamics limits for one weather tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherParams {
    /// m/s²
    pub max_accel: f64,
    /// m/s², positive
    pub max_decel: f64,
    /// m
    pub perception_radius: f64,
    /// s
    pub lane_change_duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherTable {
    pub clear: WeatherParams,
    pub slight: WeatherParams,
    pub moderate: WeatherParams,
    pub severe: WeatherParams,
}

impl Default for WeatherTable {
    fn default() -> Self {
        let p = |max_accel, max_decel, perception_radius, lane_change_duration| WeatherParams {
            max_accel,
            max_decel,
            perception_radius,
            lane_change_duration,
        };
        Self {
            clear: p(2.0, 4.0, 100.0, 2.0),
            slight: p(1.8, 3.5, 80.0, 2.25),
            moderate: p(1.5, 3.0, 60.0, 2.5),
            severe: p(1.2, 2.5, 40.0, 3.0),
        }
    }
}

impl WeatherTable {
    pub fn get(&self, tier: WeatherTier) -> WeatherParams {
        match tier {
            WeatherTier::Clear => self.clear,
            WeatherTier::Slight => self.slight,
            WeatherTier::Moderate => self.moderate,
            WeatherTier::Severe => self.severe,
        }
    }

    /// Limits must not get more permissive as the weather gets worse.
    pub fn validate(&self) -> Result<(), String> {
        let rows: Vec<_> = WeatherTier::ALL.iter().map(|t| (*t, self.get(*t))).collect();
        for (tier, p) in &rows {
            if !(p.max_accel > 0.0 && p.max_decel > 0.0 && p.perception_radius > 0.0 && p.lane_change_duration > 0.0) {
                return Err(format!("{tier} weather parameters must be positive"));
            }
        }
        for pair in rows.windows(2) {
            let ((_, a), (tier, b)) = (pair[0], pair[1]);
            if b.max_accel > a.max_accel
                || b.max_decel > a.max_decel
                || b.perception_radius > a.perception_radius
                || b.lane_change_duration < a.lane_change_duration
            {
                return Err(format!("{tier} weather parameters are not monotone in severity"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_is_monotone() {
        WeatherTable::default().validate().unwrap();
    }

    #[test]
    fn non_monotone_table_is_rejected() {
        let mut t = WeatherTable::default();
        t.severe.perception_radius = 500.0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn parses_tier_names() {
        assert_eq!("Severely".parse::<WeatherTier>().unwrap(), WeatherTier::Severe);
        assert_eq!("slight".parse::<WeatherTier>().unwrap(), WeatherTier::Slight);
        assert!("foggy".parse::<WeatherTier>().is_err());
    }
}
