//! Live provider for OpenAI-compatible chat-completion endpoints.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use nbi_core::gateway::{Completion, CompletionRequest, GatewayError, HashedEmbedder, Provider};
use nbi_core::text::estimate_tokens;
use serde_json::{json, Value};

use crate::config::GatewayConfig;

/// Counting semaphore bounding in-flight requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Done(Value),
    Retry(String),
    Fail(GatewayError),
}

pub struct LiveProvider {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    model: String,
    embedding_model: Option<String>,
    retries: u32,
    backoff: Duration,
    timeout: Duration,
    slots: Slots,
    embedder: HashedEmbedder,
}

impl LiveProvider {
    pub fn new(endpoint: &str, api_key: Option<String>, cfg: &GatewayConfig) -> Self {
        let timeout = Duration::from_millis(cfg.timeout_ms);
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build();
        LiveProvider {
            agent: ureq::Agent::new_with_config(config),
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key,
            model: cfg.model.clone(),
            embedding_model: cfg.embedding_model.clone(),
            retries: cfg.retries,
            backoff: Duration::from_millis(250),
            timeout,
            slots: Slots::new(cfg.max_in_flight),
            embedder: HashedEmbedder::new(),
        }
    }

    /// Reads the endpoint and key from the environment variables named in
    /// `cfg`.
    pub fn from_env(cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        let endpoint = std::env::var(&cfg.endpoint_env)
            .map_err(|_| GatewayError::Provider(format!("environment variable {} is not set", cfg.endpoint_env)))?;
        Ok(Self::new(&endpoint, std::env::var(&cfg.api_key_env).ok(), cfg))
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    fn attempt(&self, path: &str, body: &Value) -> Attempt {
        let mut req = self.agent.post(format!("{}{path}", self.endpoint)).header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                match status {
                    200..=299 => match serde_json::from_str(&text) {
                        Ok(v) => Attempt::Done(v),
                        Err(e) => Attempt::Fail(GatewayError::Provider(format!("unreadable response: {e}"))),
                    },
                    408 | 429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
                    _ => Attempt::Fail(GatewayError::Provider(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()))),
                }
            }
            Err(ureq::Error::Timeout(_)) => Attempt::Retry("timeout".into()),
            Err(e @ (ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound)) => Attempt::Retry(e.to_string()),
            Err(e) => Attempt::Fail(GatewayError::Provider(e.to_string())),
        }
    }

    /// Posts with retry and exponential backoff on transport failures,
    /// 408, 429 and 5xx.
    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let _permit = self.slots.acquire();
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(path, body) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(why) => last = why,
            }
        }
        if last == "timeout" {
            Err(GatewayError::Timeout(self.timeout.as_millis() as u64))
        } else {
            Err(GatewayError::Provider(format!("giving up after {} attempts: {last}", self.retries + 1)))
        }
    }
}

impl Provider for LiveProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if req.schema.is_some() {
            body["response_format"] = json!({"type": "json_object"});
        }
        let v = self.post("/chat/completions", &body)?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Provider("response has no message content".into()))?
            .to_string();
        let count = |key: &str, fallback: &str| {
            v.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(estimate_tokens(fallback) as u64)
        };
        Ok(Completion { prompt_tokens: count("prompt_tokens", &req.prompt), completion_tokens: count("completion_tokens", &text), text })
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        let Some(model) = &self.embedding_model else { return Ok(self.embedder.embed(text)) };
        let v = self.post("/embeddings", &json!({"model": model, "input": text}))?;
        let arr = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Provider("response has no embedding".into()))?;
        Ok(arr.iter().map(|x| x.as_f64().unwrap_or(0.0) as f32).collect())
    }
}
