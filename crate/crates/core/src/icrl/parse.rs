use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::IcrlError;
use crate::action::Action;

/// One parsed model decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub action: Action,
    pub safety_score: f64,
    pub efficiency_score: f64,
    pub comfort_score: f64,
    pub final_reward: f64,
    /// Free text preceding the score lines.
    pub rationale: String,
    pub raw: String,
    /// Set when the output never parsed and the record is the Idle fallback.
    pub fallback: bool,
}

impl DecisionRecord {
    pub fn simple(action: Action, reward: f64) -> Self {
        Self {
            action,
            safety_score: reward,
            efficiency_score: reward,
            comfort_score: reward,
            final_reward: reward,
            rationale: String::new(),
            raw: String::new(),
            fallback: false,
        }
    }

    pub fn fallback(raw: String) -> Self {
        Self { raw, fallback: true, ..Self::simple(Action::Idle, 0.0) }
    }

    /// Renders the record in the output format. Numbers use the shortest
    /// representation that parses back to the same value.
    pub fn render_output(&self) -> String {
        let mut out = String::new();
        if !self.rationale.is_empty() {
            out.push_str(&self.rationale);
            out.push('\n');
        }
        out.push_str(&format!(
            "Safety score: {}\nEfficiency score: {}\nComfort score: {}\nResponse to user: {}\nFINAL REWARD: {}",
            self.safety_score,
            self.efficiency_score,
            self.comfort_score,
            self.action.name(),
            self.final_reward
        ));
        out
    }
}

const NUM: &str = r"([-+]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][-+]?[0-9]+)?)";

static RESPONSE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?im)^.*?response to user\s*:(.*)$").unwrap());
static FINAL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r"(?i)final reward\s*:\s*{NUM}")).unwrap());
static FINAL_LINE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)final reward\s*:").unwrap());
static SAFETY_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r"(?i)safety score\s*:\s*{NUM}")).unwrap());
static EFFICIENCY_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)efficiency score\s*:\s*{NUM}")).unwrap());
static COMFORT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r"(?i)comfort score\s*:\s*{NUM}")).unwrap());
static FIRST_FIELD_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^.*?(safety score|efficiency score|comfort score|response to user|final reward)\s*:").unwrap()
});

fn last_number(re: &Regex, text: &str) -> Option<Result<f64, String>> {
    re.captures_iter(text).last().map(|c| c[1].parse::<f64>().map_err(|e| format!("{}: {e}", &c[1])))
}

fn unit(value: f64, what: &str) -> Result<f64, IcrlError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(IcrlError::MalformedReward(format!("{what} {value} is outside [0, 1]")))
    }
}

/// Extracts the action from the last "Response to user:" line and the
/// rewards from the score lines. Missing sub-scores default to the final reward.
pub fn parse_decision(raw: &str) -> Result<DecisionRecord, IcrlError> {
    let action = RESPONSE_RE
        .captures_iter(raw)
        .last()
        .and_then(|c| Action::find_in(&c[1]))
        .ok_or(IcrlError::UnparseableAction)?;
    let final_reward = match last_number(&FINAL_RE, raw) {
        Some(Ok(v)) => unit(v, "final reward")?,
        Some(Err(e)) => return Err(IcrlError::MalformedReward(e)),
        None if FINAL_LINE_RE.is_match(raw) => {
            return Err(IcrlError::MalformedReward("FINAL REWARD has no number".into()))
        }
        None => return Err(IcrlError::MalformedReward("no FINAL REWARD line".into())),
    };
    let sub = |re: &Regex, what: &str| -> Result<f64, IcrlError> {
        match last_number(re, raw) {
            Some(Ok(v)) => unit(v, what),
            Some(Err(e)) => Err(IcrlError::MalformedReward(e)),
            None => Ok(final_reward),
        }
    };
    let rationale = FIRST_FIELD_RE
        .find(raw)
        .map_or(raw, |m| &raw[..m.start()])
        .trim()
        .to_string();
    Ok(DecisionRecord {
        action,
        safety_score: sub(&SAFETY_RE, "safety score")?,
        efficiency_score: sub(&EFFICIENCY_RE, "efficiency score")?,
        comfort_score: sub(&COMFORT_RE, "comfort score")?,
        final_reward,
        rationale,
        raw: raw.to_string(),
        fallback: false,
    })
}
