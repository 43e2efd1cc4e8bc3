use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::http::{self, AttemptError};
use super::rate_limit::{Clock, SystemClock, TokenBucket};
use super::replay::ReplayPolicy;
use super::scripted::ScriptedPolicy;
use super::{ChatExchange, Policy, PolicyError, PolicyRequest};

/// Environment variable holding the bearer token unless the config names another.
pub const DEFAULT_AUTH_ENV: &str = "ICRL_DRIVE_API_KEY";

const MAX_RETRY_AFTER: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 4, initial_backoff_ms: 500, multiplier: 2.0, max_backoff_ms: 8_000 }
    }
}

impl RetryPolicy {
    /// Delay after the `attempt`-th failure (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(attempt.saturating_sub(1) as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_attempts == 0 {
            return Err(PolicyError::Config("max_attempts must be at least 1".into()));
        }
        if !(self.multiplier >= 1.0) {
            return Err(PolicyError::Config("backoff multiplier must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable with the bearer token; unset means no auth header.
    pub auth_env: String,
    pub max_tokens: u32,
    pub timeout_s: f64,
    pub requests_per_minute: f64,
    pub burst: u32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            auth_env: DEFAULT_AUTH_ENV.into(),
            max_tokens: 1024,
            timeout_s: 60.0,
            requests_per_minute: 30.0,
            burst: 1,
        }
    }
}

impl HttpConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.endpoint.is_empty() {
            return Err(PolicyError::Config("endpoint is empty".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(PolicyError::Config("timeout must be positive".into()));
        }
        if !(self.requests_per_minute > 0.0) || self.burst == 0 {
            return Err(PolicyError::Config("rate limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub enum Backend {
    Http(HttpConfig),
    Scripted(Arc<dyn ScriptedPolicy>),
    Replay(Arc<ReplayPolicy>),
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::Http(c) => f.debug_tuple("Http").field(c).finish(),
            Backend::Scripted(s) => f.debug_tuple("Scripted").field(&s.name()).finish(),
            Backend::Replay(_) => f.write_str("Replay"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolicyClient {
    backend: Backend,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    limiter: Option<Arc<TokenBucket>>,
    agent: Option<ureq::Agent>,
    token: Option<String>,
}

impl std::fmt::Debug for dyn Clock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Clock")
    }
}

impl PolicyClient {
    /// HTTP client with its own rate limiter, reading the token from the environment.
    pub fn http(cfg: HttpConfig, retry: RetryPolicy) -> Result<Self, PolicyError> {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::default());
        let limiter = Arc::new(TokenBucket::per_minute(cfg.requests_per_minute, cfg.burst, clock.clone()));
        let token = std::env::var(&cfg.auth_env).ok().filter(|t| !t.is_empty());
        Self::http_with(cfg, retry, clock, limiter, token)
    }

    /// HTTP client sharing `limiter` and `clock` with other clients.
    pub fn http_with(
        cfg: HttpConfig,
        retry: RetryPolicy,
        clock: Arc<dyn Clock>,
        limiter: Arc<TokenBucket>,
        token: Option<String>,
    ) -> Result<Self, PolicyError> {
        cfg.validate()?;
        retry.validate()?;
        let agent = http::agent(Duration::from_secs_f64(cfg.timeout_s));
        Ok(Self {
            backend: Backend::Http(cfg),
            retry,
            clock,
            limiter: Some(limiter),
            agent: Some(agent),
            token,
        })
    }

    pub fn scripted(script: Arc<dyn ScriptedPolicy>) -> Self {
        Self::offline(Backend::Scripted(script))
    }

    pub fn replay(replay: ReplayPolicy) -> Self {
        Self::offline(Backend::Replay(Arc::new(replay)))
    }

    fn offline(backend: Backend) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock::default()),
            limiter: None,
            agent: None,
            token: None,
        }
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    fn complete_http(
        &self,
        cfg: &HttpConfig,
        req: &PolicyRequest,
        exchanges: &mut Vec<ChatExchange>,
    ) -> Result<String, PolicyError> {
        let agent = self.agent.as_ref().expect("http backend always has an agent");
        let mut last = String::new();
        let mut timed_out = false;
        for attempt in 1..=self.retry.max_attempts {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let mut ex = ChatExchange::for_request(req, attempt);
            ex.sent_at_ms = self.clock.now().as_millis() as u64;
            let started = Instant::now();
            let result = http::send_once(agent, cfg, self.token.as_deref(), req);
            ex.latency_ms = started.elapsed().as_millis() as u64;
            let retry_after = match result {
                Ok(reply) => {
                    ex.status = Some(reply.status);
                    ex.response = Some(reply.text.clone());
                    ex.prompt_tokens = reply.prompt_tokens;
                    ex.completion_tokens = reply.completion_tokens;
                    exchanges.push(ex);
                    return Ok(reply.text);
                }
                Err(AttemptError::Auth(status)) => {
                    ex.status = Some(status);
                    ex.error = Some("authentication failed".into());
                    exchanges.push(ex);
                    return Err(PolicyError::Auth { status });
                }
                Err(AttemptError::Rejected { status, body }) => {
                    ex.status = Some(status);
                    ex.error = Some(body.clone());
                    exchanges.push(ex);
                    return Err(PolicyError::Rejected { status, body });
                }
                Err(AttemptError::Malformed(msg)) => {
                    ex.error = Some(msg.clone());
                    exchanges.push(ex);
                    return Err(PolicyError::MalformedResponse(msg));
                }
                Err(AttemptError::Timeout) => {
                    timed_out = true;
                    last = "timeout".into();
                    ex.error = Some(last.clone());
                    exchanges.push(ex);
                    None
                }
                Err(AttemptError::Transient { message, status, retry_after }) => {
                    timed_out = false;
                    ex.status = status;
                    ex.error = Some(message.clone());
                    last = message;
                    exchanges.push(ex);
                    retry_after
                }
            };
            if attempt < self.retry.max_attempts {
                let wait = retry_after.map_or_else(|| self.retry.backoff(attempt), |d| d.min(MAX_RETRY_AFTER));
                self.clock.sleep(wait);
            }
        }
        let attempts = self.retry.max_attempts;
        if timed_out {
            Err(PolicyError::Timeout { attempts })
        } else {
            Err(PolicyError::Exhausted { attempts, last })
        }
    }
}

impl Policy for PolicyClient {
    fn complete(&self, req: &PolicyRequest, exchanges: &mut Vec<ChatExchange>) -> Result<String, PolicyError> {
        match &self.backend {
            Backend::Http(cfg) => self.complete_http(cfg, req, exchanges),
            Backend::Scripted(script) => {
                let text = script.respond(req);
                let mut ex = ChatExchange::for_request(req, 1);
                ex.response = Some(text.clone());
                exchanges.push(ex);
                Ok(text)
            }
            Backend::Replay(replay) => {
                let text = replay.lookup(req)?;
                let mut ex = ChatExchange::for_request(req, 1);
                ex.response = Some(text.clone());
                exchanges.push(ex);
                Ok(text)
            }
        }
    }
}
