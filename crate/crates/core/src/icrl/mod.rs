//! Decision stack: experience buffer, prompt assembly per strategy, output
//! parsing, and the per-step decide loop.

mod buffer;
mod decide;
mod parse;
mod prompt;
mod strategy;

use thiserror::Error;

use crate::llm::PolicyError;

pub use buffer::{Experience, ExperienceBuffer, RewardSource, DEFAULT_CAPACITY};
pub use decide::{decide, CallMeta, DecisionOutcome, MAX_REASKS};
pub use parse::{parse_decision, DecisionRecord};
pub use prompt::{PromptAssembler, PromptBundle, PromptTemplates, RoundExtra};
pub use strategy::Strategy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcrlError {
    #[error("reward {0} is outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error("no valid action found in the response")]
    UnparseableAction,
    #[error("malformed reward: {0}")]
    MalformedReward(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}
