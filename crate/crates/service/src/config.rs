//! Service configuration, read from TOML. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use nbi_core::agent::{BufferConfig, DispatchConfig};
use nbi_core::context::ContextConfig;
use nbi_core::graph::RetrievalConfig;
use nbi_core::knowledge::GenConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Environment variable holding the static bearer token. Requests
    /// other than `/health` need it when the variable is set.
    pub token_env: String,
    /// Origins allowed by CORS; empty disables the CORS layer.
    pub allow_origins: Vec<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { bind: "127.0.0.1:8080".into(), token_env: "NBI_TOKEN".into(), allow_origins: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub dir: PathBuf,
    /// Notebook events between snapshots.
    pub snapshot_every: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { dir: PathBuf::from("data"), snapshot_every: 32 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Live,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub provider: ProviderKind,
    /// Fixture directory for the scripted provider.
    pub fixtures: Option<PathBuf>,
    pub endpoint_env: String,
    pub api_key_env: String,
    pub model: String,
    /// Embedding model on the live endpoint; hashed embeddings when unset.
    pub embedding_model: Option<String>,
    pub max_in_flight: usize,
    pub retries: u32,
    pub timeout_ms: u64,
    /// Per-tag temperature overrides.
    pub temperatures: BTreeMap<String, f32>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            provider: ProviderKind::Live,
            fixtures: None,
            endpoint_env: "NBI_LLM_ENDPOINT".into(),
            api_key_env: "NBI_LLM_API_KEY".into(),
            model: "gpt-4o".into(),
            embedding_model: None,
            max_in_flight: 4,
            retries: 3,
            timeout_ms: 60_000,
            temperatures: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    pub store: StoreConfig,
    /// Directory with `*.table.json`, `*.bundle.json`, `glossary.json` and
    /// `embeddings.jsonl` seeding the tables and the initial graph.
    pub world: Option<PathBuf>,
    pub gateway: GatewayConfig,
    pub retrieval: RetrievalConfig,
    pub generation: GenConfig,
    pub buffer: BufferConfig,
    pub context: ContextConfig,
    pub dispatch: DispatchConfig,
}

fn unknown_key(message: &str) -> Option<String> {
    let rest = &message[message.find("unknown field `")? + "unknown field `".len()..];
    Some(rest[..rest.find('`')?].to_string())
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| match unknown_key(e.message()) {
            Some(key) => ConfigError::UnknownKey { key },
            None => ConfigError::Parse(e.to_string()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| Err(ConfigError::Invalid { key: key.into(), message });
        if let Err(e) = self.bind_addr() {
            return invalid("server.bind", e);
        }
        if self.store.snapshot_every == 0 {
            return invalid("store.snapshot_every", "must be positive".into());
        }
        if self.gateway.max_in_flight == 0 {
            return invalid("gateway.max_in_flight", "must be positive".into());
        }
        if self.gateway.timeout_ms == 0 {
            return invalid("gateway.timeout_ms", "must be positive".into());
        }
        if self.gateway.provider == ProviderKind::Scripted && self.gateway.fixtures.is_none() {
            return invalid("gateway.fixtures", "the scripted provider needs a fixture directory".into());
        }
        if let Err(e) = self.retrieval.validate() {
            return invalid("retrieval", e);
        }
        if let Err(e) = self.generation.validate() {
            return invalid("generation", e.to_string());
        }
        if self.buffer.initial_capacity == 0 {
            return invalid("buffer.initial_capacity", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.context.markdown_threshold) {
            return invalid("context.markdown_threshold", "must be in [0, 1]".into());
        }
        if self.dispatch.call_budget == 0 {
            return invalid("dispatch.call_budget", "must be positive".into());
        }
        Ok(())
    }

    pub fn bind_addr(&self) -> Result<SocketAddr, String> {
        self.server.bind.parse().map_err(|e| format!("`{}`: {e}", self.server.bind))
    }

    /// Forces the scripted provider over `dir`.
    pub fn with_fixtures(mut self, dir: PathBuf) -> Self {
        self.gateway.provider = ProviderKind::Scripted;
        self.gateway.fixtures = Some(dir);
        self
    }
}
