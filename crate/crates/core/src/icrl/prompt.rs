use serde::{Deserialize, Serialize};

use super::{ExperienceBuffer, RewardSource, Strategy};
use crate::llm::{request_hash, ChatMessage};
use crate::scene::{action_menu, fill, render_last_decision, SceneTemplates, SceneText};

const DEFAULT_PROMPTS: &str = include_str!("../../templates/prompts.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplates {
    pub system: String,
    pub icrl_instruction: String,
    pub output_format: String,
    pub context_header: String,
    pub cot_suffix: String,
    pub critique: String,
    pub revise: String,
    pub format_reminder: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::from_toml(DEFAULT_PROMPTS).expect("bundled prompt templates parse")
    }
}

impl PromptTemplates {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Extra material for self-refine rounds after the first.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundExtra {
    None,
    Critique { previous: String },
    Revise { previous: String, critique: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub state: String,
    /// Empty unless the strategy feeds experience back.
    pub context: String,
    pub actions: String,
    pub suffix: String,
}

impl PromptBundle {
    /// System message, then one user message: state, context, menu, suffix.
    pub fn messages(&self) -> Vec<ChatMessage> {
        let user: Vec<&str> = [&self.state, &self.context, &self.actions, &self.suffix]
            .into_iter()
            .map(String::as_str)
            .filter(|s| !s.is_empty())
            .collect();
        vec![ChatMessage::system(&self.system), ChatMessage::user(user.join("\n\n"))]
    }

    pub fn hash(&self) -> String {
        request_hash(&self.messages())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptAssembler {
    pub scene: SceneTemplates,
    pub prompts: PromptTemplates,
    /// Route description inserted into the system prompt.
    pub goal: String,
    pub decision_period: f64,
    pub reward_source: RewardSource,
}

impl PromptAssembler {
    pub fn new(goal: impl Into<String>) -> Self {
        Self {
            scene: SceneTemplates::default(),
            prompts: PromptTemplates::default(),
            goal: goal.into(),
            decision_period: 1.0,
            reward_source: RewardSource::default(),
        }
    }

    /// Renders the buffer as context blocks: each past scene with its
    /// last-decision line replaced by the action taken there and its reward.
    pub fn render_context(&self, buf: &ExperienceBuffer) -> String {
        if buf.is_empty() {
            return String::new();
        }
        let blocks: Vec<String> = buf
            .entries()
            .map(|e| {
                let reward = e.context_reward(self.reward_source);
                let last = render_last_decision(Some((e.action, Some(reward))), true, self.decision_period, &self.scene);
                e.scene.render_with_last_decision(&self.scene, &last)
            })
            .collect();
        format!("{}\n{}", self.prompts.context_header, blocks.join("\n\n"))
    }

    pub fn assemble(
        &self,
        strategy: Strategy,
        scene: &SceneText,
        buf: &ExperienceBuffer,
        extra: &RoundExtra,
    ) -> PromptBundle {
        let p = &self.prompts;
        let period = crate::scene::fmt_const(self.decision_period);
        let mut system = fill(&p.system, &[("goal", &self.goal), ("period", &period)]);
        if strategy.uses_context() {
            system.push_str("\n\n");
            system.push_str(&p.icrl_instruction);
        }
        system.push_str("\n\n");
        system.push_str(&p.output_format);

        let suffix = match (strategy, extra) {
            (Strategy::Icrl | Strategy::NoIcrl, _) => String::new(),
            (Strategy::Cot | Strategy::BestOfN { .. }, _) => p.cot_suffix.clone(),
            (Strategy::SelfRefine { .. }, RoundExtra::None) => p.cot_suffix.clone(),
            (Strategy::SelfRefine { .. }, RoundExtra::Critique { previous }) => {
                fill(&p.critique, &[("previous", previous)])
            }
            (Strategy::SelfRefine { .. }, RoundExtra::Revise { previous, critique }) => {
                fill(&p.revise, &[("previous", previous), ("critique", critique)])
            }
        };
        PromptBundle {
            system,
            state: scene.render(&self.scene),
            context: if strategy.uses_context() { self.render_context(buf) } else { String::new() },
            actions: action_menu(&self.scene).to_string(),
            suffix,
        }
    }
}
