//! A stationary five-action bandit driven through the full ICRL decision path.

use std::sync::Arc;

use crate::action::Action;
use crate::icrl::{decide, CallMeta, ExperienceBuffer, IcrlError, PromptAssembler, Strategy};
use crate::llm::scripted::LearnerScript;
use crate::llm::PolicyClient;
use crate::scene::SceneText;

/// Reward of each action, in menu order; rewards depend only on the action.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditFixture {
    pub rewards: [f64; 5],
    pub epsilon: f64,
}

impl Default for BanditFixture {
    fn default() -> Self {
        Self { rewards: [0.9, 0.1, 0.1, 0.1, 0.1], epsilon: 0.1 }
    }
}

impl BanditFixture {
    pub fn reward(&self, action: Action) -> f64 {
        let i = Action::MENU_ORDER.iter().position(|a| *a == action).expect("menu covers every action");
        self.rewards[i]
    }
}

fn bandit_scene() -> SceneText {
    SceneText {
        current_lane: "You are on a test track with a single lane.".into(),
        next_lane: "There is no junction ahead.".into(),
        ego_state: "Your vehicle is stationary.".into(),
        nearby: "There are no other vehicles.".into(),
        weather: "The weather is clear.".into(),
        last_decision: "This is your first decision.".into(),
    }
}

/// Evaluator reward of each of `decisions` choices made by the scripted
/// learner, each choice being a one-step episode fed back as context.
pub fn run_bandit(seed: u64, decisions: u32, fixture: &BanditFixture) -> Result<Vec<f64>, IcrlError> {
    let policy = PolicyClient::scripted(Arc::new(LearnerScript::new(fixture.epsilon, seed)));
    let assembler = PromptAssembler::new("Pick the action that earns the most reward.");
    let mut buffer = ExperienceBuffer::with_capacity((decisions as usize).max(crate::icrl::DEFAULT_CAPACITY));
    let scene = bandit_scene();
    let run_id = format!("bandit-s{seed}");
    let mut rewards = Vec::with_capacity(decisions as usize);
    for step in 1..=decisions {
        let mut exchanges = vec![];
        let meta = CallMeta { run_id: &run_id, step, temperature: None };
        let outcome = decide(Strategy::Icrl, &scene, &buffer, &assembler, &policy, meta, &mut exchanges)?;
        let r = fixture.reward(outcome.record.action);
        buffer.append(scene.clone(), &outcome.record, Some(r), true)?;
        rewards.push(r);
    }
    Ok(rewards)
}
