use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::road_net::Side;

/// High-level ego maneuver. Discriminants are the action ids shown to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Accelerate = 1,
    Decelerate = 2,
    TurnLeft = 3,
    TurnRight = 4,
    Idle = 8,
}

impl Action {
    /// Listing order used by the action menu.
    pub const MENU_ORDER: [Action; 5] = [
        Action::Accelerate,
        Action::Idle,
        Action::Decelerate,
        Action::TurnLeft,
        Action::TurnRight,
    ];

    pub const ALL: [Action; 5] = [
        Action::Accelerate,
        Action::Decelerate,
        Action::TurnLeft,
        Action::TurnRight,
        Action::Idle,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Accelerate => "Accelerate",
            Action::Decelerate => "Decelerate",
            Action::TurnLeft => "Turn Left",
            Action::TurnRight => "Turn Right",
            Action::Idle => "Idle",
        }
    }

    pub fn lane_change(self) -> Option<Side> {
        match self {
            Action::TurnLeft => Some(Side::Left),
            Action::TurnRight => Some(Side::Right),
            _ => None,
        }
    }

    /// Finds the earliest action name mentioned in `text`, ignoring case,
    /// whitespace and punctuation (so `\texttt{Turn Left}` and `turn_left` match).
    pub fn find_in(text: &str) -> Option<Action> {
        let normalized: String = text
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Action::ALL
            .into_iter()
            .filter_map(|a| {
                let key: String = a.name().chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect();
                normalized.find(&key).map(|pos| (pos, a))
            })
            .min_by_key(|(pos, _)| *pos)
            .map(|(_, a)| a)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::find_in(s).ok_or_else(|| format!("unknown action {s:?}"))
    }
}
