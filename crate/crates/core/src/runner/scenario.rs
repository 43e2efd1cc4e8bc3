//! One closed-loop episode: observe, render, decide, simulate, evaluate, remember.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::transcript::{self, DecisionEntry, TranscriptRecord};
use super::{RunError, ScenarioConfig, SCHEMA_VERSION};
use crate::action::Action;
use crate::icrl::{decide, CallMeta, ExperienceBuffer, PromptAssembler};
use crate::llm::{Policy, PolicyClient, ReplayPolicy};
use crate::reward::{self, EpisodeMetrics};
use crate::scene::render_scene;
use crate::sim::{spawn_world, LastDecision, SimError, StepRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub run_id: String,
    pub metrics: EpisodeMetrics,
    /// Per-decision window reward, in decision order.
    pub rewards: Vec<f64>,
    /// Reward stored in the buffer for each decision.
    pub evaluator_rewards: Vec<f64>,
    pub actions: Vec<Action>,
    pub transcript_path: PathBuf,
    pub transcript_hash: String,
    /// Wall clock; zero when reconstructed from a transcript.
    pub duration: Duration,
}

impl RunResult {
    pub fn decisions(&self) -> usize {
        self.actions.len()
    }

    /// Rebuilds a result from a finished transcript, recomputing its metrics.
    pub fn from_transcript(path: &Path) -> Result<Self, RunError> {
        let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
        let records = transcript::read_transcript(path)?;
        let bad = |message: String| RunError::Transcript { path: path.to_path_buf(), message };
        let Some(TranscriptRecord::Header { run_id, config, .. }) = records.first() else {
            return Err(bad("missing header".into()));
        };
        let metrics = metrics_from_records(&records, &config.reward).map_err(|e| bad(e.to_string()))?;
        match records.last() {
            Some(TranscriptRecord::Footer { metrics: Some(m), .. }) if *m == metrics => {}
            Some(TranscriptRecord::Footer { metrics: Some(_), .. }) => {
                return Err(bad("footer metrics differ from the recomputed ones".into()))
            }
            _ => return Err(bad("transcript has no completed-episode footer".into())),
        }
        let entries: Vec<&DecisionEntry> = decision_entries(&records).collect();
        Ok(RunResult {
            config: config.clone(),
            run_id: run_id.clone(),
            metrics,
            rewards: entries.iter().map(|d| d.step_reward).collect(),
            evaluator_rewards: entries.iter().map(|d| d.evaluator_reward).collect(),
            actions: entries.iter().map(|d| d.action).collect(),
            transcript_path: path.to_path_buf(),
            transcript_hash: transcript::sha256_hex(&bytes),
            duration: Duration::ZERO,
        })
    }
}

fn decision_entries(records: &[TranscriptRecord]) -> impl Iterator<Item = &DecisionEntry> {
    records.iter().filter_map(|r| match r {
        TranscriptRecord::Decision(d) => Some(d),
        _ => None,
    })
}

/// Episode metrics from the step and decision records of a transcript.
pub fn metrics_from_records(
    records: &[TranscriptRecord],
    params: &reward::RewardParams,
) -> Result<EpisodeMetrics, reward::RewardError> {
    let steps: Vec<StepRecord> = records
        .iter()
        .filter_map(|r| match r {
            TranscriptRecord::Step { record, .. } => Some(record.clone()),
            _ => None,
        })
        .collect();
    let evaluator: Vec<f64> = decision_entries(records).map(|d| d.evaluator_reward).collect();
    reward::episode_metrics(&steps, &evaluator, params)
}

pub fn transcript_path(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join("transcripts").join(format!("{run_id}.jsonl"))
}

/// Runs `cfg` with the policy it names, writing `out_dir/transcripts/<run_id>.jsonl`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let policy = cfg.policy.build(cfg.seed, None)?;
    run_scenario_with(cfg, &policy, &transcript_path(out_dir, &cfg.run_id()))
}

/// Runs `cfg` against an already built policy.
pub fn run_scenario_with(cfg: &ScenarioConfig, policy: &dyn Policy, path: &Path) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let started = Instant::now();
    let run_id = cfg.run_id();
    let layout = cfg.map.layout(cfg.seed).map_err(SimError::from)?;
    let mut world = spawn_world(&layout, cfg.density, cfg.weather, cfg.seed, Arc::new(cfg.sim.clone()))?
        .with_time_limit(cfg.horizon as f64 * cfg.decision_period);

    let mut assembler = PromptAssembler::new(layout.goal.description.clone());
    assembler.decision_period = cfg.decision_period;
    assembler.reward_source = cfg.context.reward_source;
    let mut buffer = ExperienceBuffer::with_capacity(cfg.context.buffer_capacity);

    let mut records = vec![TranscriptRecord::Header { schema: SCHEMA_VERSION, run_id: run_id.clone(), config: cfg.clone() }];
    let mut trace = vec![world.record(vec![])];
    records.push(TranscriptRecord::Step { decision: 0, record: trace[0].clone() });

    let mut last: Option<LastDecision> = None;
    let mut rewards = vec![];
    let mut evaluator_rewards = vec![];
    let mut actions = vec![];
    let temperature = cfg.temperature.unwrap_or(cfg.strategy.temperature());

    for step in 1..=cfg.horizon {
        let obs = world.observe(last, cfg.decision_period)?;
        let scene = render_scene(&obs, &assembler.scene);
        let mut exchanges = vec![];
        let meta = CallMeta { run_id: &run_id, step, temperature: cfg.temperature };
        let outcome = decide(cfg.strategy, &scene, &buffer, &assembler, policy, meta, &mut exchanges);
        records.extend(exchanges.into_iter().map(TranscriptRecord::Exchange));
        let outcome = match outcome {
            Ok(o) => o,
            Err(source) => {
                records.push(TranscriptRecord::Footer {
                    decisions: step - 1,
                    metrics: None,
                    error: Some(source.to_string()),
                });
                transcript::write_transcript(path, &records)?;
                return Err(RunError::Policy { step, source, transcript: path.to_path_buf() });
            }
        };

        let action = outcome.record.action;
        let window_start = trace.len() - 1;
        for i in 0..cfg.substeps() {
            let events = world.step((i == 0).then_some(action), cfg.sim.dt);
            let record = world.record(events);
            records.push(TranscriptRecord::Step { decision: step, record: record.clone() });
            trace.push(record);
            if world.is_done() {
                break;
            }
        }
        let done = world.is_done();
        let step_reward = reward::step_reward(&trace[window_start..], &cfg.reward)?;
        let evaluator_reward = match (done, cfg.context.sparse_terminal_only) {
            (true, _) => {
                let (r_s, r_c, r_e) = reward::trace_scores(&trace, &cfg.reward)?;
                if cfg.context.sparse_terminal_only {
                    reward::combine(r_s, r_c, r_e)
                } else {
                    step_reward
                }
            }
            (false, true) => 0.0,
            (false, false) => step_reward,
        };

        buffer
            .append(scene, &outcome.record, Some(evaluator_reward), done)
            .map_err(|source| RunError::Policy { step, source, transcript: path.to_path_buf() })?;
        records.push(TranscriptRecord::Decision(DecisionEntry {
            step,
            action,
            record: outcome.record.clone(),
            strategy: cfg.strategy,
            temperature,
            bundle_hash: outcome.bundle_hash.clone(),
            candidates: outcome.candidates.iter().map(|c| c.action).collect(),
            rounds: outcome.rounds,
            step_reward,
            evaluator_reward,
            done,
            bundle: cfg.transcript.include_prompts.then(|| outcome.bundle.clone()),
        }));
        rewards.push(step_reward);
        evaluator_rewards.push(evaluator_reward);
        actions.push(action);
        last = Some(LastDecision { action, reward: Some(step_reward) });
        if done {
            break;
        }
    }

    let metrics = reward::episode_metrics(&trace, &evaluator_rewards, &cfg.reward)?;
    records.push(TranscriptRecord::Footer {
        decisions: actions.len() as u32,
        metrics: Some(metrics.clone()),
        error: None,
    });
    let transcript_hash = transcript::write_transcript(path, &records)?;
    Ok(RunResult {
        config: cfg.clone(),
        run_id,
        metrics,
        rewards,
        evaluator_rewards,
        actions,
        transcript_path: path.to_path_buf(),
        transcript_hash,
        duration: started.elapsed(),
    })
}

/// Re-executes a recorded episode against its own recorded responses, writing
/// the new transcript to `out_path`, and checks that decisions and metrics match.
pub fn replay_transcript(path: &Path, out_path: &Path) -> Result<RunResult, RunError> {
    let original = RunResult::from_transcript(path)?;
    let records = transcript::read_transcript(path)?;
    let exchanges = records.iter().filter_map(|r| match r {
        TranscriptRecord::Exchange(ex) => Some(ex),
        _ => None,
    });
    let policy = PolicyClient::replay(ReplayPolicy::from_exchanges(exchanges));
    let replayed = run_scenario_with(&original.config, &policy, out_path)?;
    if replayed.actions != original.actions {
        return Err(RunError::ReplayMismatch(format!(
            "decisions differ: recorded {:?}, replayed {:?}",
            original.actions, replayed.actions
        )));
    }
    if replayed.metrics != original.metrics {
        return Err(RunError::ReplayMismatch(format!(
            "metrics differ: recorded {:?}, replayed {:?}",
            original.metrics, replayed.metrics
        )));
    }
    Ok(replayed)
}
