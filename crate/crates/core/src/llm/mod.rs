//! Policy backends: a chat-completion HTTP client, deterministic scripted
//! policies, and transcript replay.

mod client;
mod http;
mod rate_limit;
mod replay;
pub mod scripted;
pub mod stub;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use client::{Backend, HttpConfig, PolicyClient, RetryPolicy, DEFAULT_AUTH_ENV};
pub use rate_limit::{Clock, ManualClock, SystemClock, TokenBucket};
pub use replay::ReplayPolicy;
pub use scripted::ScriptedPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// SHA-256 (hex) over the role and content bytes of each message, in order.
pub fn request_hash(messages: &[ChatMessage]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        let role = serde_json::to_string(&m.role).expect("role serializes");
        h.update((role.len() as u64).to_le_bytes());
        h.update(role.as_bytes());
        h.update((m.content.len() as u64).to_le_bytes());
        h.update(m.content.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Why a policy call is being made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CallKind {
    Decision,
    Critique,
    Revision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub run_id: String,
    /// 1-based decision index within the run.
    pub step: u32,
    pub kind: CallKind,
    /// Best-of-N sample index, 0-based.
    pub sample: u32,
    /// Self-refine round, 1-based.
    pub round: u32,
    /// Number of format re-asks preceding this call.
    pub reask: u32,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl PolicyRequest {
    pub fn hash(&self) -> String {
        request_hash(&self.messages)
    }

    /// Identity of the call within a run, used to line up replayed responses.
    pub fn key(&self) -> (u32, CallKind, u32, u32, u32) {
        (self.step, self.kind, self.sample, self.round, self.reask)
    }
}

/// One request/response attempt, logged before the response is parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub run_id: String,
    pub step: u32,
    pub kind: CallKind,
    pub sample: u32,
    pub round: u32,
    pub reask: u32,
    /// 1-based transport attempt.
    pub attempt: u32,
    pub request_hash: String,
    pub temperature: f64,
    pub response: Option<String>,
    pub error: Option<String>,
    pub status: Option<u16>,
    pub latency_ms: u64,
    /// Client clock reading when the request went out.
    pub sent_at_ms: u64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl ChatExchange {
    pub fn for_request(req: &PolicyRequest, attempt: u32) -> Self {
        Self {
            run_id: req.run_id.clone(),
            step: req.step,
            kind: req.kind,
            sample: req.sample,
            round: req.round,
            reask: req.reask,
            attempt,
            request_hash: req.hash(),
            temperature: req.temperature,
            response: None,
            error: None,
            status: None,
            latency_ms: 0,
            sent_at_ms: 0,
            prompt_tokens: None,
            completion_tokens: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("policy request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("policy endpoint rejected the credentials (status {status})")]
    Auth { status: u16 },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed policy response: {0}")]
    MalformedResponse(String),
    #[error("replay mismatch: {0}")]
    Replay(String),
    #[error("policy misconfigured: {0}")]
    Config(String),
}

/// A frozen policy: text in, text out. Every attempt is appended to `exchanges`.
pub trait Policy: Send + Sync {
    fn complete(&self, req: &PolicyRequest, exchanges: &mut Vec<ChatExchange>) -> Result<String, PolicyError>;
}
