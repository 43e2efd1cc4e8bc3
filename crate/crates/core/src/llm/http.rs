//! Single chat-completion attempt over HTTP.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{HttpConfig, PolicyRequest};

#[derive(Debug)]
pub(crate) struct Reply {
    pub text: String,
    pub status: u16,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug)]
pub(crate) enum AttemptError {
    Transient { message: String, status: Option<u16>, retry_after: Option<Duration> },
    Timeout,
    Auth(u16),
    Rejected { status: u16, body: String },
    Malformed(String),
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub(crate) fn request_body(cfg: &HttpConfig, req: &PolicyRequest) -> String {
    json!({
        "model": cfg.model,
        "messages": req.messages,
        "temperature": req.temperature,
        "max_tokens": cfg.max_tokens,
    })
    .to_string()
}

fn parse_reply(status: u16, body: &str) -> Result<Reply, AttemptError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| AttemptError::Malformed(e.to_string()))?;
    let text = wire
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| AttemptError::Malformed("missing choices[0].message.content".into()))?;
    let (prompt_tokens, completion_tokens) =
        wire.usage.map_or((None, None), |u| (u.prompt_tokens, u.completion_tokens));
    Ok(Reply { text, status, prompt_tokens, completion_tokens })
}

pub(crate) fn send_once(
    agent: &ureq::Agent,
    cfg: &HttpConfig,
    token: Option<&str>,
    req: &PolicyRequest,
) -> Result<Reply, AttemptError> {
    let mut call = agent.post(&cfg.endpoint).header("Content-Type", "application/json");
    if let Some(token) = token {
        call = call.header("Authorization", &format!("Bearer {token}"));
    }
    let mut resp = match call.send(request_body(cfg, req)) {
        Ok(r) => r,
        Err(ureq::Error::Timeout(_)) => return Err(AttemptError::Timeout),
        Err(e) => return Err(AttemptError::Transient { message: e.to_string(), status: None, retry_after: None }),
    };
    let status = resp.status().as_u16();
    let retry_after = resp
        .headers()
        .get("retry-after")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64);
    let body = match resp.body_mut().read_to_string() {
        Ok(b) => b,
        Err(ureq::Error::Timeout(_)) => return Err(AttemptError::Timeout),
        Err(e) => return Err(AttemptError::Transient { message: e.to_string(), status: Some(status), retry_after }),
    };
    match status {
        200..=299 => parse_reply(status, &body),
        401 | 403 => Err(AttemptError::Auth(status)),
        408 | 429 | 500..=599 => Err(AttemptError::Transient {
            message: format!("status {status}"),
            status: Some(status),
            retry_after,
        }),
        _ => Err(AttemptError::Rejected { status, body }),
    }
}
