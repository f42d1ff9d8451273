//! Knowledge bundle types and structural validation of model output.
//!
//! Unknown keys are dropped, columns outside the schema are dropped, and
//! missing required text fields reject the draft.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::SchemaInfo;
use crate::text::extract_json;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatabaseKnowledge {
    #[serde(default)]
    pub name: String,
    pub description: String,
    pub usage: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableKnowledge {
    #[serde(default)]
    pub name: String,
    pub description: String,
    pub usage: String,
    pub organization: String,
    #[serde(default)]
    pub key_column_names: Vec<String>,
    #[serde(default)]
    pub key_derived_attribute_names: Vec<String>,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivedColumn {
    pub name: String,
    pub description: String,
    pub usage: String,
    pub calculation_logic: String,
    #[serde(default)]
    pub related_columns: Vec<String>,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnKnowledge {
    pub description: String,
    pub usage: String,
    #[serde(rename = "type")]
    pub data_type: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub derived: Vec<DerivedColumn>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBundle {
    pub database: DatabaseKnowledge,
    pub table: TableKnowledge,
    pub columns: BTreeMap<String, ColumnKnowledge>,
}

impl KnowledgeBundle {
    pub fn derived_names(&self) -> BTreeSet<&str> {
        self.columns.values().flat_map(|c| c.derived.iter().map(|d| d.name.as_str())).collect()
    }

    /// Every column name the bundle mentions: keyed columns, key column
    /// names, and derived entries' related columns.
    pub fn mentioned_columns(&self) -> BTreeSet<&str> {
        let mut out: BTreeSet<&str> = self.columns.keys().map(String::as_str).collect();
        out.extend(self.table.key_column_names.iter().map(String::as_str));
        for c in self.columns.values() {
            for d in &c.derived {
                out.extend(d.related_columns.iter().map(String::as_str));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for BundleIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn issue(path: impl Into<String>, message: impl Into<String>) -> BundleIssue {
    BundleIssue { path: path.into(), message: message.into() }
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, BundleIssue> {
    v.as_object().ok_or_else(|| issue(path, "expected an object"))
}

fn text(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String, BundleIssue> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(Value::String(_)) => Err(issue(format!("{path}.{key}"), "must be nonempty")),
        Some(_) => Err(issue(format!("{path}.{key}"), "expected a string")),
        None => Err(issue(format!("{path}.{key}"), "missing required field")),
    }
}

fn list(obj: &Map<String, Value>, key: &str) -> Vec<String> {
    match obj.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(Value::as_str)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        Some(Value::String(s)) => s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
        _ => Vec::new(),
    }
}

fn parse_derived(v: &Value, path: &str, schema: &SchemaInfo) -> Result<DerivedColumn, BundleIssue> {
    let o = object(v, path)?;
    Ok(DerivedColumn {
        name: text(o, "name", path)?,
        description: text(o, "description", path)?,
        usage: text(o, "usage", path)?,
        calculation_logic: text(o, "calculation_logic", path)?,
        related_columns: list(o, "related_columns").into_iter().filter(|c| schema.has_column(c)).collect(),
        tags: list(o, "tags"),
    })
}

fn parse_column(name: &str, v: &Value, schema: &SchemaInfo) -> Result<ColumnKnowledge, BundleIssue> {
    let path = format!("columns.{name}");
    let o = object(v, &path)?;
    let data_type = match o.get("type").and_then(Value::as_str) {
        Some(t) if !t.trim().is_empty() => t.trim().to_string(),
        _ => schema.declared_type(name).unwrap_or("unknown").to_string(),
    };
    let derived = match o.get("derived") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, d)| parse_derived(d, &format!("{path}.derived[{i}]"), schema))
            .collect::<Result<Vec<_>, _>>()?,
        _ => Vec::new(),
    };
    Ok(ColumnKnowledge {
        description: text(o, "description", &path)?,
        usage: text(o, "usage", &path)?,
        data_type,
        tags: list(o, "tags"),
        derived,
    })
}

/// Validates a model reply against the bundle structure and the schema.
pub fn parse_bundle(reply: &str, schema: &SchemaInfo) -> Result<KnowledgeBundle, BundleIssue> {
    let root = extract_json(reply).ok_or_else(|| issue("$", "no JSON object in reply"))?;
    from_value(&root, schema)
}

pub(crate) fn from_value(root: &Value, schema: &SchemaInfo) -> Result<KnowledgeBundle, BundleIssue> {
    let root = object(root, "$")?;
    let db = object(root.get("database").ok_or_else(|| issue("database", "missing required field"))?, "database")?;
    let tb = object(root.get("table").ok_or_else(|| issue("table", "missing required field"))?, "table")?;
    let cols = object(root.get("columns").ok_or_else(|| issue("columns", "missing required field"))?, "columns")?;

    let mut columns = BTreeMap::new();
    for (name, v) in cols {
        if schema.has_column(name) {
            columns.insert(name.clone(), parse_column(name, v, schema)?);
        }
    }
    let derived: BTreeSet<String> = columns.values().flat_map(|c| c.derived.iter().map(|d| d.name.clone())).collect();
    Ok(KnowledgeBundle {
        database: DatabaseKnowledge {
            name: schema.database.clone(),
            description: text(db, "description", "database")?,
            usage: text(db, "usage", "database")?,
            tags: list(db, "tags"),
        },
        table: TableKnowledge {
            name: schema.table.clone(),
            description: text(tb, "description", "table")?,
            usage: text(tb, "usage", "table")?,
            organization: text(tb, "organization", "table")?,
            key_column_names: list(tb, "key_column_names").into_iter().filter(|c| schema.has_column(c)).collect(),
            key_derived_attribute_names: list(tb, "key_derived_attribute_names")
                .into_iter()
                .filter(|c| derived.contains(c))
                .collect(),
            tags: list(tb, "tags"),
        },
        columns,
    })
}
