use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::notebook::CellId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Content {
    Sql(String),
    Code(String),
    ChartSpec(Value),
    TablePreview(Value),
    Text(String),
    Error(String),
}

impl Content {
    pub fn kind(&self) -> &'static str {
        match self {
            Content::Sql(_) => "sql",
            Content::Code(_) => "code",
            Content::ChartSpec(_) => "chart_spec",
            Content::TablePreview(_) => "table_preview",
            Content::Text(_) => "text",
            Content::Error(_) => "error",
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Content::Sql(s) | Content::Code(s) | Content::Text(s) | Content::Error(s) => s.trim().is_empty(),
            Content::ChartSpec(v) | Content::TablePreview(v) => v.is_null(),
        }
    }

    /// Text rendering used in prompts and token estimates.
    pub fn render(&self) -> String {
        match self {
            Content::Sql(s) | Content::Code(s) | Content::Text(s) | Content::Error(s) => s.clone(),
            Content::ChartSpec(v) | Content::TablePreview(v) => v.to_string(),
        }
    }
}

/// Six-field message exchanged between agents through the shared buffer.
/// `origin_cell` links a unit to the notebook cell it produced, when any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationUnit {
    pub data_source: String,
    pub role: String,
    pub action: String,
    pub description: String,
    pub content: Content,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_cell: Option<CellId>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitKey {
    pub role: String,
    pub action: String,
    pub data_source: String,
}

impl fmt::Display for UnitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.role, self.action, self.data_source)
    }
}

impl InformationUnit {
    pub fn key(&self) -> UnitKey {
        UnitKey { role: self.role.clone(), action: self.action.clone(), data_source: self.data_source.clone() }
    }

    /// Name of the first empty required field, if any.
    pub fn missing_field(&self) -> Option<&'static str> {
        [
            ("data_source", self.data_source.trim().is_empty()),
            ("role", self.role.trim().is_empty()),
            ("action", self.action.trim().is_empty()),
            ("description", self.description.trim().is_empty()),
            ("content", self.content.is_empty()),
        ]
        .into_iter()
        .find(|(_, empty)| *empty)
        .map(|(name, _)| name)
    }
}
