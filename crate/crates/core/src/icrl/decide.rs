use super::{parse_decision, DecisionRecord, ExperienceBuffer, IcrlError, PromptAssembler, PromptBundle, RoundExtra, Strategy};
use crate::llm::{CallKind, ChatExchange, ChatMessage, Policy, PolicyRequest};
use crate::scene::SceneText;

/// Format re-asks before falling back to Idle.
pub const MAX_REASKS: u32 = 3;

#[derive(Debug, Clone, Copy)]
pub struct CallMeta<'a> {
    pub run_id: &'a str,
    pub step: u32,
    /// Overrides the strategy's default sampling temperature.
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionOutcome {
    pub record: DecisionRecord,
    /// Prompt of the first call (sample 0, round 1).
    pub bundle: PromptBundle,
    pub bundle_hash: String,
    /// Every parsed candidate: Best-of-N samples or Self-Refine rounds.
    pub candidates: Vec<DecisionRecord>,
    pub rounds: u32,
}

struct Caller<'a> {
    policy: &'a dyn Policy,
    meta: CallMeta<'a>,
    temperature: f64,
    reminder: &'a str,
}

impl Caller<'_> {
    fn request(&self, kind: CallKind, sample: u32, round: u32, reask: u32, messages: Vec<ChatMessage>) -> PolicyRequest {
        PolicyRequest {
            run_id: self.meta.run_id.to_string(),
            step: self.meta.step,
            kind,
            sample,
            round,
            reask,
            messages,
            temperature: self.temperature,
        }
    }

    /// Asks for a decision, re-asking with a format reminder when the reply
    /// does not parse.
    fn decision(
        &self,
        kind: CallKind,
        sample: u32,
        round: u32,
        bundle: &PromptBundle,
        exchanges: &mut Vec<ChatExchange>,
    ) -> Result<DecisionRecord, IcrlError> {
        let mut messages = bundle.messages();
        let mut last_raw = String::new();
        for reask in 0..=MAX_REASKS {
            let req = self.request(kind, sample, round, reask, messages.clone());
            let raw = self.policy.complete(&req, exchanges)?;
            match parse_decision(&raw) {
                Ok(rec) => return Ok(rec),
                Err(IcrlError::UnparseableAction | IcrlError::MalformedReward(_)) => {
                    messages.push(ChatMessage::assistant(raw.clone()));
                    messages.push(ChatMessage::user(self.reminder));
                    last_raw = raw;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(DecisionRecord::fallback(last_raw))
    }
}

/// Runs one decision under `strategy`.
pub fn decide(
    strategy: Strategy,
    scene: &SceneText,
    buf: &ExperienceBuffer,
    assembler: &PromptAssembler,
    policy: &dyn Policy,
    meta: CallMeta<'_>,
    exchanges: &mut Vec<ChatExchange>,
) -> Result<DecisionOutcome, IcrlError> {
    let strategy = strategy.validate()?;
    let caller = Caller {
        policy,
        meta,
        temperature: meta.temperature.unwrap_or(strategy.temperature()),
        reminder: &assembler.prompts.format_reminder,
    };
    let bundle = assembler.assemble(strategy, scene, buf, &RoundExtra::None);
    let bundle_hash = bundle.hash();
    let outcome = |record, candidates, rounds, bundle: PromptBundle| DecisionOutcome {
        record,
        bundle,
        bundle_hash: bundle_hash.clone(),
        candidates,
        rounds,
    };

    match strategy {
        Strategy::Icrl | Strategy::Cot | Strategy::NoIcrl => {
            let rec = caller.decision(CallKind::Decision, 0, 1, &bundle, exchanges)?;
            Ok(outcome(rec.clone(), vec![rec], 1, bundle))
        }
        Strategy::BestOfN { n } => {
            let mut samples = Vec::with_capacity(n as usize);
            for i in 0..n {
                samples.push(caller.decision(CallKind::Decision, i, 1, &bundle, exchanges)?);
            }
            let mut best = 0;
            for (i, s) in samples.iter().enumerate() {
                if s.final_reward > samples[best].final_reward {
                    best = i;
                }
            }
            Ok(outcome(samples[best].clone(), samples, 1, bundle))
        }
        Strategy::SelfRefine { max_rounds } => {
            let mut prev = caller.decision(CallKind::Decision, 0, 1, &bundle, exchanges)?;
            let mut rounds = vec![prev.clone()];
            let mut round = 1;
            while round < max_rounds {
                round += 1;
                let critique_bundle =
                    assembler.assemble(strategy, scene, buf, &RoundExtra::Critique { previous: prev.raw.clone() });
                let req = caller.request(CallKind::Critique, 0, round, 0, critique_bundle.messages());
                let critique = policy.complete(&req, exchanges)?;
                let revise_bundle = assembler.assemble(
                    strategy,
                    scene,
                    buf,
                    &RoundExtra::Revise { previous: prev.raw.clone(), critique },
                );
                let rec = caller.decision(CallKind::Revision, 0, round, &revise_bundle, exchanges)?;
                let converged = rec.action == prev.action;
                rounds.push(rec.clone());
                prev = rec;
                if converged {
                    break;
                }
            }
            Ok(outcome(prev, rounds, round, bundle))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Action;
    use crate::llm::scripted::{answer, FixedScript, FnScript};
    use crate::llm::PolicyClient;
    use std::sync::Arc;
    use std::sync::Mutex;

    fn scene() -> SceneText {
        SceneText {
            current_lane: "c".into(),
            next_lane: "n".into(),
            ego_state: "e".into(),
            nearby: "v".into(),
            weather: "w".into(),
            last_decision: "l".into(),
        }
    }

    fn meta() -> CallMeta<'static> {
        CallMeta { run_id: "t", step: 1, temperature: None }
    }

    fn run(strategy: Strategy, script: Arc<dyn crate::llm::ScriptedPolicy>) -> (DecisionOutcome, Vec<ChatExchange>) {
        let client = PolicyClient::scripted(script);
        let mut ex = vec![];
        let out = decide(strategy, &scene(), &ExperienceBuffer::default(), &PromptAssembler::new("g"), &client, meta(), &mut ex)
            .unwrap();
        (out, ex)
    }

    #[test]
    fn best_of_n_takes_first_maximum() {
        let script = FixedScript::new(vec![
            answer(Action::Idle, 0.5, ""),
            answer(Action::Accelerate, 0.9, ""),
            answer(Action::TurnLeft, 0.9, ""),
        ]);
        let (out, ex) = run(Strategy::BestOfN { n: 3 }, Arc::new(script));
        assert_eq!(out.record.action, Action::Accelerate);
        assert_eq!(out.candidates.len(), 3);
        assert_eq!(ex.iter().map(|e| e.sample).collect::<Vec<_>>(), [0, 1, 2]);
        assert!(ex.iter().all(|e| e.temperature == 0.8));
    }

    #[test]
    fn self_refine_stops_on_repeat() {
        let script = FnScript(|req: &PolicyRequest| match req.kind {
            CallKind::Critique => "fine".to_string(),
            _ => answer(Action::TurnLeft, 0.7, ""),
        });
        let (out, ex) = run(Strategy::SelfRefine { max_rounds: 5 }, Arc::new(script));
        assert_eq!((out.record.action, out.rounds), (Action::TurnLeft, 2));
        let kinds: Vec<_> = ex.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, [CallKind::Decision, CallKind::Critique, CallKind::Revision]);
    }

    #[test]
    fn self_refine_respects_max_rounds() {
        let n = Mutex::new(0usize);
        let script = FnScript(move |req: &PolicyRequest| {
            if req.kind == CallKind::Critique {
                return "change".to_string();
            }
            let mut i = n.lock().unwrap();
            *i += 1;
            answer(if i.is_multiple_of(2) { Action::Idle } else { Action::Accelerate }, 0.5, "")
        });
        let (out, _) = run(Strategy::SelfRefine { max_rounds: 4 }, Arc::new(script));
        assert_eq!(out.rounds, 4);
        assert_eq!(out.candidates.len(), 4);
    }

    #[test]
    fn reasks_then_falls_back_to_idle() {
        let (out, ex) = run(Strategy::NoIcrl, Arc::new(FixedScript::new(vec!["I would go fast.".into()])));
        assert!(out.record.fallback);
        assert_eq!((out.record.action, out.record.final_reward), (Action::Idle, 0.0));
        assert_eq!(ex.len(), 1 + MAX_REASKS as usize);
        assert_eq!(ex.last().unwrap().reask, MAX_REASKS);
    }

    #[test]
    fn reask_recovers() {
        let script = FixedScript::new(vec!["garbage".into(), answer(Action::Decelerate, 0.6, "")]);
        let (out, ex) = run(Strategy::Icrl, Arc::new(script));
        assert_eq!(out.record.action, Action::Decelerate);
        assert!(!out.record.fallback);
        assert_eq!(ex.len(), 2);
    }
}
