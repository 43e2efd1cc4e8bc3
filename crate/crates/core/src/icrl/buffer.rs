use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{DecisionRecord, IcrlError};
use crate::action::Action;
use crate::scene::SceneText;

pub const DEFAULT_CAPACITY: usize = 64;

/// Which reward is shown next to past actions in the prompt context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardSource {
    /// The model's own FINAL REWARD.
    #[serde(rename = "self")]
    SelfAssigned,
    /// The evaluator's reward, falling back to the self-assigned one when absent.
    #[default]
    Evaluator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub scene: SceneText,
    pub action: Action,
    pub self_reward: f64,
    pub evaluator_reward: Option<f64>,
    pub done: bool,
}

impl Experience {
    pub fn context_reward(&self, source: RewardSource) -> f64 {
        match source {
            RewardSource::SelfAssigned => self.self_reward,
            RewardSource::Evaluator => self.evaluator_reward.unwrap_or(self.self_reward),
        }
    }
}

/// Chronological experience, bounded by evicting whole episodes oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceBuffer {
    entries: VecDeque<Experience>,
    capacity: usize,
}

impl Default for ExperienceBuffer {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }
}

fn check(r: f64) -> Result<(), IcrlError> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(IcrlError::RewardOutOfRange(r))
    }
}

impl ExperienceBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        Self { entries: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &Experience> + DoubleEndedIterator {
        self.entries.iter()
    }

    pub fn append(
        &mut self,
        scene: SceneText,
        rec: &DecisionRecord,
        evaluator_reward: Option<f64>,
        done: bool,
    ) -> Result<(), IcrlError> {
        check(rec.final_reward)?;
        if let Some(r) = evaluator_reward {
            check(r)?;
        }
        self.entries.push_back(Experience {
            scene,
            action: rec.action,
            self_reward: rec.final_reward,
            evaluator_reward,
            done,
        });
        while self.entries.len() > self.capacity {
            self.evict_oldest_episode();
        }
        Ok(())
    }

    /// Drops the oldest completed episode, or the oldest entry if the only
    /// episode in the buffer is still open.
    fn evict_oldest_episode(&mut self) {
        let end = self.entries.iter().position(|e| e.done).filter(|&i| i + 1 < self.entries.len());
        match end {
            Some(i) => {
                self.entries.drain(..=i);
            }
            None => {
                self.entries.pop_front();
            }
        }
    }

    /// Replaces the evaluator reward of the most recent entry.
    pub fn set_last_evaluator_reward(&mut self, reward: f64) -> Result<(), IcrlError> {
        check(reward)?;
        if let Some(e) = self.entries.back_mut() {
            e.evaluator_reward = Some(reward);
        }
        Ok(())
    }
}
