//! Seeded sweeps over weather, density, map and strategy.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{run_scenario_with, transcript_path, RunResult};
use super::{PolicyConfig, RunError, ScenarioConfig};
use crate::icrl::Strategy;
use crate::llm::{SystemClock, TokenBucket};
use crate::road_net::MapArchetype;
use crate::sim::WeatherTier;

/// Replaces the policy of every cell matching all the given fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellOverride {
    /// Map name, e.g. `highway-junction`.
    pub map: Option<String>,
    pub weather: Option<WeatherTier>,
    pub density: Option<u32>,
    pub strategy: Option<Strategy>,
    pub seed: Option<u64>,
    pub policy: PolicyConfig,
}

impl CellOverride {
    fn matches(&self, cfg: &ScenarioConfig) -> bool {
        self.map.as_deref().is_none_or(|m| m == cfg.map.name())
            && self.weather.is_none_or(|w| w == cfg.weather)
            && self.density.is_none_or(|d| d == cfg.density)
            && self.strategy.is_none_or(|s| s == cfg.strategy)
            && self.seed.is_none_or(|s| s == cfg.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixSpec {
    /// Every cell starts from this config.
    pub base: ScenarioConfig,
    pub weathers: Vec<WeatherTier>,
    pub densities: Vec<u32>,
    pub maps: Vec<MapArchetype>,
    pub strategies: Vec<Strategy>,
    /// Repetitions per cell.
    pub seeds: u32,
    pub first_seed: u64,
    pub overrides: Vec<CellOverride>,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        Self {
            base: ScenarioConfig::default(),
            weathers: WeatherTier::ALL.to_vec(),
            densities: vec![1, 2, 3],
            maps: vec![MapArchetype::highway(), MapArchetype::intersection()],
            strategies: vec![Strategy::Icrl],
            seeds: 5,
            first_seed: 1,
            overrides: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub run_id: String,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug)]
pub struct MatrixOutcome {
    /// In cell order: map, weather, density, strategy, seed.
    pub results: Vec<RunResult>,
    pub failures: Vec<CellFailure>,
}

impl MatrixSpec {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let spec: MatrixSpec = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let empty = |what: &str| Err(RunError::Config(format!("matrix needs at least one {what}")));
        if self.weathers.is_empty() {
            return empty("weather tier");
        }
        if self.densities.is_empty() {
            return empty("density");
        }
        if self.maps.is_empty() {
            return empty("map");
        }
        if self.strategies.is_empty() {
            return empty("strategy");
        }
        if self.seeds < 1 {
            return empty("seed");
        }
        self.cells().iter().try_for_each(ScenarioConfig::validate)
    }

    /// One config per (cell × seed), in stable order.
    pub fn cells(&self) -> Vec<ScenarioConfig> {
        let mut out = vec![];
        for map in &self.maps {
            for &weather in &self.weathers {
                for &density in &self.densities {
                    for &strategy in &self.strategies {
                        for i in 0..self.seeds as u64 {
                            let mut cfg = ScenarioConfig {
                                run_id: None,
                                seed: self.first_seed + i,
                                weather,
                                density,
                                strategy,
                                map: map.clone(),
                                ..self.base.clone()
                            };
                            if let Some(o) = self.overrides.iter().rev().find(|o| o.matches(&cfg)) {
                                cfg.policy = o.policy.clone();
                            }
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Runs every cell on up to `parallelism` threads. Cells whose policy fails
/// are retried once; remaining failures are reported without aborting the sweep.
pub fn run_matrix(spec: &MatrixSpec, parallelism: usize, out_dir: &Path) -> Result<MatrixOutcome, RunError> {
    spec.validate()?;
    let cells = spec.cells();
    let limiter = cells.iter().find_map(|c| match &c.policy {
        PolicyConfig::Http { http, .. } => Some(Arc::new(TokenBucket::per_minute(
            http.requests_per_minute,
            http.burst,
            Arc::new(SystemClock::default()),
        ))),
        _ => None,
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| RunError::Config(e.to_string()))?;

    let run_cell = |cfg: &ScenarioConfig| -> Result<RunResult, (u32, RunError)> {
        let path = transcript_path(out_dir, &cfg.run_id());
        let mut attempts = 0;
        loop {
            attempts += 1;
            let outcome = cfg
                .policy
                .build(cfg.seed, limiter.clone())
                .and_then(|policy| run_scenario_with(cfg, &policy, &path));
            match outcome {
                Err(e) if e.is_policy_failure() && attempts < 2 => continue,
                Err(e) => return Err((attempts, e)),
                Ok(r) => return Ok(r),
            }
        }
    };
    let outcomes: Vec<_> = pool.install(|| cells.par_iter().map(run_cell).collect());

    let mut results = vec![];
    let mut failures = vec![];
    for (cfg, outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err((attempts, e)) => failures.push(CellFailure { run_id: cfg.run_id(), attempts, error: e.to_string() }),
        }
    }
    Ok(MatrixOutcome { results, failures })
}
