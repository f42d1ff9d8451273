//! Single choke point for completion and embedding calls.
//!
//! Every model call in the engine goes through [`Gateway`], which delegates to
//! a [`Provider`] and keeps a per-tag token ledger. Tests and the CLI's
//! `--fixtures` mode use [`ScriptedProvider`], which replays committed JSONL
//! fixtures keyed by prompt fingerprint.

mod embed;
mod fingerprint;
mod scripted;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use embed::{cosine, HashedEmbedder, EMBED_DIM};
pub use fingerprint::{fingerprint, normalize_prompt};
pub use scripted::{FixtureEntry, FnProvider, Recorder, ScriptedProvider};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("no fixture for fingerprint {fingerprint} (tag `{tag}`)")]
    MissingFixture { fingerprint: String, tag: String },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub temperature: f32,
    pub max_tokens: u32,
    pub tag: String,
}

impl CompletionRequest {
    pub fn new(tag: impl Into<String>, prompt: impl Into<String>) -> Self {
        CompletionRequest { prompt: prompt.into(), schema: None, temperature: 0.0, max_tokens: 1024, tag: tag.into() }
    }

    pub fn with_schema(mut self, schema: impl Into<String>) -> Self {
        self.schema = Some(schema.into());
        self
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.prompt, self.schema.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub trait Provider: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, GatewayError>;
    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub struct Gateway {
    provider: Arc<dyn Provider>,
    ledger: Mutex<BTreeMap<String, TagUsage>>,
    temperatures: BTreeMap<String, f32>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Gateway { provider, ledger: Mutex::new(BTreeMap::new()), temperatures: BTreeMap::new() }
    }

    pub fn scripted(provider: ScriptedProvider) -> Self {
        Gateway::new(Arc::new(provider))
    }

    /// Per-tag temperature overrides applied to every request with that tag.
    pub fn with_temperatures(mut self, temps: BTreeMap<String, f32>) -> Self {
        self.temperatures = temps;
        self
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        if req.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        let owned;
        let req = match self.temperatures.get(&req.tag) {
            Some(&t) => {
                owned = CompletionRequest { temperature: t, ..req.clone() };
                &owned
            }
            None => req,
        };
        let out = self.provider.complete(req)?;
        let mut ledger = self.ledger.lock().unwrap_or_else(|e| e.into_inner());
        let usage = ledger.entry(req.tag.clone()).or_default();
        usage.calls += 1;
        usage.prompt_tokens += out.prompt_tokens;
        usage.completion_tokens += out.completion_tokens;
        Ok(out.text)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        self.provider.embed(text)
    }

    pub fn token_report(&self) -> BTreeMap<String, TagUsage> {
        self.ledger.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn total_usage(&self) -> TagUsage {
        self.token_report().values().fold(TagUsage::default(), |acc, u| TagUsage {
            calls: acc.calls + u.calls,
            prompt_tokens: acc.prompt_tokens + u.prompt_tokens,
            completion_tokens: acc.completion_tokens + u.completion_tokens,
        })
    }

    pub fn reset_report(&self) {
        self.ledger.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }
}
