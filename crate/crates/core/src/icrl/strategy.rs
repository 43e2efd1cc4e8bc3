use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IcrlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    /// Experience context plus the cumulative-reward instruction.
    Icrl,
    /// Step-by-step reasoning without context.
    Cot,
    /// `n` independent samples, keep the highest self-assigned reward.
    BestOfN { n: u32 },
    /// Generate, critique, revise until the action repeats or `max_rounds` is hit.
    SelfRefine { max_rounds: u32 },
    /// Scene and menu only.
    NoIcrl,
}

impl Strategy {
    pub const BEST_OF_N_DEFAULT: u32 = 3;
    pub const SELF_REFINE_DEFAULT: u32 = 3;

    pub fn temperature(self) -> f64 {
        match self {
            Strategy::BestOfN { .. } => 0.8,
            _ => 0.2,
        }
    }

    pub fn uses_context(self) -> bool {
        self == Strategy::Icrl
    }

    pub fn validate(self) -> Result<Self, IcrlError> {
        match self {
            Strategy::BestOfN { n } if n < 2 => Err(IcrlError::InvalidStrategy("best-of-n needs n >= 2".into())),
            Strategy::SelfRefine { max_rounds: 0 } => {
                Err(IcrlError::InvalidStrategy("self-refine needs max_rounds >= 1".into()))
            }
            s => Ok(s),
        }
    }

    /// Short label used in reports.
    pub fn label(self) -> String {
        match self {
            Strategy::Icrl => "ICRL".into(),
            Strategy::Cot => "CoT".into(),
            Strategy::BestOfN { n } => format!("Best-of-N({n})"),
            Strategy::SelfRefine { .. } => "Self-Refine".into(),
            Strategy::NoIcrl => "w/o ICRL".into(),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Icrl => f.write_str("icrl"),
            Strategy::Cot => f.write_str("cot"),
            Strategy::BestOfN { n } => write!(f, "best-of-n:{n}"),
            Strategy::SelfRefine { max_rounds } => write!(f, "self-refine:{max_rounds}"),
            Strategy::NoIcrl => f.write_str("no-icrl"),
        }
    }
}

impl FromStr for Strategy {
    type Err = IcrlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s.as_str(), None),
        };
        let num = |default: u32| -> Result<u32, IcrlError> {
            arg.map_or(Ok(default), |a| a.parse().map_err(|_| IcrlError::InvalidStrategy(format!("bad count {a:?}"))))
        };
        let strategy = match name {
            "icrl" => Strategy::Icrl,
            "cot" => Strategy::Cot,
            "best-of-n" | "bestofn" => Strategy::BestOfN { n: num(Self::BEST_OF_N_DEFAULT)? },
            "self-refine" | "selfrefine" => Strategy::SelfRefine { max_rounds: num(Self::SELF_REFINE_DEFAULT)? },
            "no-icrl" | "noicrl" => Strategy::NoIcrl,
            other => return Err(IcrlError::InvalidStrategy(format!("unknown strategy {other:?}"))),
        };
        if arg.is_some() && matches!(strategy, Strategy::Icrl | Strategy::Cot | Strategy::NoIcrl) {
            return Err(IcrlError::InvalidStrategy(format!("{name} takes no argument")));
        }
        strategy.validate()
    }
}

impl TryFrom<String> for Strategy {
    type Error = IcrlError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}
