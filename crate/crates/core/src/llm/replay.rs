use std::collections::HashMap;

use super::{CallKind, ChatExchange, PolicyError, PolicyRequest};

type Key = (u32, CallKind, u32, u32, u32);

/// Serves the responses recorded in a transcript back to the same calls.
#[derive(Debug, Clone, Default)]
pub struct ReplayPolicy {
    responses: HashMap<Key, (String, String)>,
    /// When set, a request whose prompt hash differs from the recording is an error.
    pub verify_hash: bool,
}

impl ReplayPolicy {
    pub fn from_exchanges<'a>(exchanges: impl IntoIterator<Item = &'a ChatExchange>) -> Self {
        let mut responses = HashMap::new();
        for ex in exchanges {
            if let Some(text) = &ex.response {
                let key = (ex.step, ex.kind, ex.sample, ex.round, ex.reask);
                responses.insert(key, (ex.request_hash.clone(), text.clone()));
            }
        }
        Self { responses, verify_hash: true }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn lookup(&self, req: &PolicyRequest) -> Result<String, PolicyError> {
        let (hash, text) = self.responses.get(&req.key()).ok_or_else(|| {
            PolicyError::Replay(format!(
                "no recorded response for step {} {:?} sample {} round {} reask {}",
                req.step, req.kind, req.sample, req.round, req.reask
            ))
        })?;
        if self.verify_hash && *hash != req.hash() {
            return Err(PolicyError::Replay(format!("prompt for step {} differs from the recording", req.step)));
        }
        Ok(text.clone())
    }
}
