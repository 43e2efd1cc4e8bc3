use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::action::Action;
use crate::icrl::{RewardSource, Strategy, DEFAULT_CAPACITY};
use crate::llm::scripted::{ConstantScript, ExpertScript, LearnerScript};
use crate::llm::{HttpConfig, PolicyClient, ReplayPolicy, RetryPolicy, ScriptedPolicy, TokenBucket};
use crate::reward::RewardParams;
use crate::road_net::MapArchetype;
use crate::sim::{SimConfig, WeatherTier};

/// Version stamped into every file the runner writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptName {
    /// Merges early and keeps a safe headway.
    Expert,
    /// Holds its lane until the junction is close, then tries to merge.
    TooLateMerge,
    /// Always answers with `action`.
    Constant,
    /// ε-greedy over the rewards in its context.
    Learner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyConfig {
    Scripted {
        script: ScriptName,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_action")]
        action: Action,
        /// Junction distance (m) at which the too-late script starts merging.
        #[serde(default = "default_merge_trigger")]
        merge_trigger: f64,
    },
    Http {
        #[serde(default)]
        http: HttpConfig,
        #[serde(default)]
        retry: RetryPolicy,
    },
    Replay {
        transcript: PathBuf,
    },
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_action() -> Action {
    Action::Idle
}

fn default_merge_trigger() -> f64 {
    25.0
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig::scripted(ScriptName::Expert)
    }
}

impl PolicyConfig {
    pub fn scripted(script: ScriptName) -> Self {
        PolicyConfig::Scripted {
            script,
            epsilon: default_epsilon(),
            action: default_action(),
            merge_trigger: default_merge_trigger(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PolicyConfig::Scripted { script, .. } => {
                format!("scripted:{}", serde_json::to_value(script).unwrap().as_str().unwrap_or("?"))
            }
            PolicyConfig::Http { http, .. } => format!("http:{}", http.model),
            PolicyConfig::Replay { .. } => "replay".into(),
        }
    }

    /// Instantiates the backend; `limiter` is shared by every HTTP client built with it.
    pub fn build(&self, seed: u64, limiter: Option<Arc<TokenBucket>>) -> Result<PolicyClient, RunError> {
        Ok(match self {
            PolicyConfig::Scripted { script, epsilon, action, merge_trigger } => {
                let s: Arc<dyn ScriptedPolicy> = match script {
                    ScriptName::Expert => Arc::new(ExpertScript::new()),
                    ScriptName::TooLateMerge => Arc::new(ExpertScript::too_late(*merge_trigger)),
                    ScriptName::Constant => Arc::new(ConstantScript(*action)),
                    ScriptName::Learner => {
                        if !(0.0..=1.0).contains(epsilon) {
                            return Err(RunError::Config(format!("epsilon {epsilon} is not a probability")));
                        }
                        Arc::new(LearnerScript::new(*epsilon, seed))
                    }
                };
                PolicyClient::scripted(s)
            }
            PolicyConfig::Http { http, retry } => match limiter {
                Some(limiter) => {
                    let token = std::env::var(&http.auth_env).ok().filter(|t| !t.is_empty());
                    let clock = Arc::new(crate::llm::SystemClock::default());
                    PolicyClient::http_with(http.clone(), retry.clone(), clock, limiter, token)
                        .map_err(|e| RunError::Config(e.to_string()))?
                }
                None => PolicyClient::http(http.clone(), retry.clone()).map_err(|e| RunError::Config(e.to_string()))?,
            },
            PolicyConfig::Replay { transcript } => {
                let records = super::transcript::read_transcript(transcript)?;
                let exchanges: Vec<_> = records
                    .iter()
                    .filter_map(|r| match r {
                        super::transcript::TranscriptRecord::Exchange(ex) => Some(ex),
                        _ => None,
                    })
                    .collect();
                PolicyClient::replay(ReplayPolicy::from_exchanges(exchanges))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    /// Stores zero evaluator reward for every non-terminal decision.
    pub sparse_terminal_only: bool,
    pub reward_source: RewardSource,
    pub buffer_capacity: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self { sparse_terminal_only: true, reward_source: RewardSource::Evaluator, buffer_capacity: DEFAULT_CAPACITY }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TranscriptConfig {
    /// Also records the full prompt bundle of every decision.
    pub include_prompts: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    /// Defaults to the cell key.
    pub run_id: Option<String>,
    pub seed: u64,
    /// Maximum number of decisions.
    pub horizon: u32,
    /// Seconds of simulated time between decisions.
    pub decision_period: f64,
    pub weather: WeatherTier,
    pub density: u32,
    pub strategy: Strategy,
    /// Overrides the strategy's sampling temperature.
    pub temperature: Option<f64>,
    pub map: MapArchetype,
    pub policy: PolicyConfig,
    pub reward: RewardParams,
    pub context: ContextConfig,
    pub sim: SimConfig,
    pub transcript: TranscriptConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            run_id: None,
            seed: 1,
            horizon: 120,
            decision_period: 1.0,
            weather: WeatherTier::Clear,
            density: 1,
            strategy: Strategy::Icrl,
            temperature: None,
            map: MapArchetype::highway(),
            policy: PolicyConfig::default(),
            reward: RewardParams::default(),
            context: ContextConfig::default(),
            sim: SimConfig::default(),
            transcript: TranscriptConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Physics steps per decision.
    pub fn substeps(&self) -> u32 {
        (self.decision_period / self.sim.dt).round() as u32
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema));
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if !(1..=3).contains(&self.density) {
            return bad(format!("density must be 1, 2 or 3, got {}", self.density));
        }
        let k = self.decision_period / self.sim.dt;
        if !(self.decision_period > 0.0) || k.round() < 1.0 || (k - k.round()).abs() > 1e-9 {
            return bad(format!(
                "decision period {} must be a positive multiple of dt {}",
                self.decision_period, self.sim.dt
            ));
        }
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("temperature {t} outside [0, 2]"));
            }
        }
        if self.context.buffer_capacity == 0 {
            return bad("buffer capacity must be positive".into());
        }
        self.strategy.validate().map_err(|e| RunError::Config(e.to_string()))?;
        self.map.validate().map_err(|e| RunError::Config(e.to_string()))?;
        self.sim.validate().map_err(|e| RunError::Config(e.to_string()))?;
        self.reward.validate().map_err(|e| RunError::Config(e.to_string()))?;
        Ok(())
    }

    /// Stable identifier of the (map, weather, density, strategy, seed) cell.
    pub fn cell_key(&self) -> String {
        format!(
            "{}-{}-{}x-{}-s{}",
            self.map.name(),
            self.weather,
            self.density,
            self.strategy.to_string().replace(':', ""),
            self.seed
        )
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| self.cell_key())
    }
}
