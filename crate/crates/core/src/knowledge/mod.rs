//! Knowledge generation from script history, and the data-profiling
//! fallback for tables without usable scripts.

mod bundle;
mod generate;
mod profile;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::gateway::GatewayError;

pub use bundle::{
    parse_bundle, BundleIssue, ColumnKnowledge, DatabaseKnowledge, DerivedColumn, KnowledgeBundle, TableKnowledge,
};
pub use generate::{
    extract_score, generate_knowledge, map_generate, preprocess_scripts, reduce_synthesize, self_calibrate,
    GenerationReport, MapResult,
};
pub use profile::{interpret_profile, profile_table, ColumnProfile, InferredType, ProfileInterpretation, TableProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Sql,
    Python,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub id: String,
    pub language: Language,
    pub text: String,
    pub last_run: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptHistory {
    pub scripts: Vec<Script>,
    #[serde(default)]
    pub table_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub declared_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaInfo {
    pub database: String,
    pub table: String,
    pub columns: Vec<ColumnSchema>,
}

impl SchemaInfo {
    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn declared_type(&self, name: &str) -> Option<&str> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.declared_type.as_str())
    }

    pub fn validate(&self) -> Result<(), KnowledgeError> {
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(KnowledgeError::InvalidSchema(format!("duplicate column `{}`", c.name)));
            }
        }
        Ok(())
    }
}

/// `upstream` and `downstream` are `table.column` identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEdge {
    pub upstream: String,
    pub downstream: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LineageInfo {
    pub edges: Vec<LineageEdge>,
}

impl LineageInfo {
    /// Edges with an endpoint in `table`.
    pub fn touching<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a LineageEdge> {
        let prefix = format!("{table}.");
        self.edges.iter().filter(move |e| e.upstream.starts_with(&prefix) || e.downstream.starts_with(&prefix))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub score_threshold: u8,
    pub max_attempts: u32,
    pub dedup_similarity: f64,
    /// Concurrent map-phase scripts.
    pub max_in_flight: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { score_threshold: 4, max_attempts: 3, dedup_similarity: 0.9, max_in_flight: 4 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if !(1..=5).contains(&self.score_threshold) {
            return Err(KnowledgeError::InvalidConfig("score_threshold must be in [1, 5]".into()));
        }
        if self.max_attempts == 0 {
            return Err(KnowledgeError::InvalidConfig("max_attempts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dedup_similarity) {
            return Err(KnowledgeError::InvalidConfig("dedup_similarity must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("invalid model output: {0}")]
    InvalidModelOutput(String),
    #[error("no acceptable draft after {} attempts (best score {})", .0.attempts, .0.score)]
    AttemptsExhausted(Box<MapResult>),
    #[error("reduce needs at least one draft")]
    NoDrafts,
    #[error("table has no columns")]
    EmptyTable,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}
