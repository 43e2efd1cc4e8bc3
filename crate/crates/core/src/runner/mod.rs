//! Scenario configs, the closed decision loop, experiment sweeps and reports.

pub mod bandit;
pub mod config;
pub mod matrix;
pub mod report;
pub mod scenario;
pub mod transcript;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use bandit::{run_bandit, BanditFixture};
pub use config::{ContextConfig, PolicyConfig, ScenarioConfig, ScriptName, TranscriptConfig, SCHEMA_VERSION};
pub use matrix::{run_matrix, CellFailure, CellOverride, MatrixOutcome, MatrixSpec};
pub use report::{emit_reports, ReportFiles};
pub use scenario::{replay_transcript, run_scenario, run_scenario_with, RunResult};
pub use transcript::{read_transcript, TranscriptRecord};

use crate::icrl::IcrlError;
use crate::reward::RewardError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    /// The policy failed; the partial transcript is on disk at `transcript`.
    #[error("policy failure at decision {step}: {source} (partial transcript at {})", transcript.display())]
    Policy { step: u32, source: IcrlError, transcript: PathBuf },
    #[error("malformed transcript {}: {message}", path.display())]
    Transcript { path: PathBuf, message: String },
    #[error("replay diverged: {0}")]
    ReplayMismatch(String),
    #[error("no results to report")]
    EmptyResults,
    #[error("report output: {0}")]
    Report(String),
}

impl RunError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io { path: path.to_path_buf(), source }
    }

    /// True for failures caused by the policy backend, which a matrix retries once.
    pub fn is_policy_failure(&self) -> bool {
        matches!(self, RunError::Policy { .. })
    }
}
