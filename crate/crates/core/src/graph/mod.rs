//! Knowledge graph: a forest of database, table, column and value nodes,
//! free-standing jargon nodes, and alias nodes attached to a primary node by
//! an associative edge.

mod dsl;
mod index;
mod retrieve;
mod rewrite;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::knowledge::{KnowledgeBundle, TableProfile};

pub use dsl::{
    dsl_to_sql, dsl_to_vis, parse_dsl_reply, translate_to_dsl, validate_chart_spec, validate_dsl, Aggregation, Condition, Dimension,
    DimensionType, DslError, DslSpec, FieldError, KnowledgeSource, Measure, OperatorKind, OperatorRegistry, Order,
    SortDirection, CHART_SCHEMA_URL, DSL_SCHEMA, DSL_SCHEMA_ID, TAG_TRANSLATE,
};
pub use index::{build_indexes, IndexEntry, Indexes, TaskProfile};
pub use retrieve::{coarse_retrieve, fine_order, llm_eval, FineOrder, RetrievalConfig, ScoredNode};
pub use rewrite::{resolve_dates, rewrite_query, DateRange, Rewrite, RewriteError, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Database,
    Table,
    Column,
    Value,
    Jargon,
    Alias,
}

impl NodeType {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Database => "database",
            NodeType::Table => "table",
            NodeType::Column => "column",
            NodeType::Value => "value",
            NodeType::Jargon => "jargon",
            NodeType::Alias => "alias",
        }
    }

    /// Tie-break rank: lower sorts first.
    pub fn precedence(self) -> u8 {
        match self {
            NodeType::Column => 0,
            NodeType::Table => 1,
            NodeType::Database => 2,
            NodeType::Value => 3,
            NodeType::Jargon => 4,
            NodeType::Alias => 5,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeNode {
    pub id: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub name: String,
    #[serde(default)]
    pub components: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl KnowledgeNode {
    pub fn component_text(&self, key: &str) -> Option<String> {
        match self.components.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Array(items) => {
                let parts: Vec<String> = items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect();
                (!parts.is_empty()).then(|| parts.join(", "))
            }
            Value::Null => None,
            other => Some(other.to_string()),
        }
    }

    pub fn is_derived(&self) -> bool {
        self.components.get("derived").and_then(Value::as_bool).unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Logical,
    Associative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
}

/// Manually curated glossary input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GlossaryEntry {
    Jargon {
        name: String,
        description: String,
        #[serde(default)]
        aliases: Vec<String>,
        #[serde(default)]
        related_columns: Vec<String>,
    },
    /// `target` is a node id or the unique name of a primary node.
    Alias { alias: String, target: String },
    /// `column` is a column node id.
    Value {
        column: String,
        value: String,
        #[serde(default)]
        description: String,
    },
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("node `{id}` references missing parent `{parent}`")]
    OrphanNode { id: String, parent: String },
    #[error("alias target `{0}` does not resolve to exactly one primary node")]
    UnknownTarget(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("malformed graph file line {line}: {message}")]
    Malformed { line: usize, message: String },
}

pub fn database_id(db: &str) -> String {
    format!("db:{db}")
}

pub fn table_id(db: &str, table: &str) -> String {
    format!("tb:{db}.{table}")
}

pub fn column_id(db: &str, table: &str, column: &str) -> String {
    format!("col:{db}.{table}.{column}")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<String, KnowledgeNode>,
    /// alias node id -> primary node id
    aliases: BTreeMap<String, String>,
}

fn texts(items: &[String]) -> Value {
    Value::Array(items.iter().map(|s| Value::String(s.clone())).collect())
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&KnowledgeNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &KnowledgeNode> {
        self.nodes.values()
    }

    pub fn count(&self, t: NodeType) -> usize {
        self.nodes.values().filter(|n| n.node_type == t).count()
    }

    pub fn children(&self, id: &str) -> Vec<&KnowledgeNode> {
        self.nodes.values().filter(|n| n.parent.as_deref() == Some(id)).collect()
    }

    /// Primary node an alias points to; primary nodes resolve to themselves.
    pub fn backtrack(&self, id: &str) -> Option<&KnowledgeNode> {
        let node = self.nodes.get(id)?;
        match node.node_type {
            NodeType::Alias => self.nodes.get(self.aliases.get(id)?),
            _ => Some(node),
        }
    }

    pub fn aliases_of(&self, id: &str) -> Vec<&KnowledgeNode> {
        self.aliases.iter().filter(|(_, t)| *t == id).filter_map(|(a, _)| self.nodes.get(a)).collect()
    }

    pub fn edges(&self) -> Vec<GraphEdge> {
        let mut out: Vec<GraphEdge> = self
            .nodes
            .values()
            .filter_map(|n| {
                n.parent.as_ref().map(|p| GraphEdge { from: p.clone(), to: n.id.clone(), kind: EdgeKind::Logical })
            })
            .collect();
        out.extend(
            self.aliases
                .iter()
                .map(|(a, t)| GraphEdge { from: a.clone(), to: t.clone(), kind: EdgeKind::Associative }),
        );
        out
    }

    /// Inserts or merges a node. Components are merged key by key.
    pub fn insert_node(&mut self, node: KnowledgeNode) -> Result<(), GraphError> {
        if let Some(p) = &node.parent {
            if !self.nodes.contains_key(p) {
                return Err(GraphError::OrphanNode { id: node.id.clone(), parent: p.clone() });
            }
        }
        match self.nodes.get_mut(&node.id) {
            Some(existing) => {
                existing.name = node.name;
                existing.node_type = node.node_type;
                existing.parent = node.parent;
                existing.components.extend(node.components);
            }
            None => {
                self.nodes.insert(node.id.clone(), node);
            }
        }
        Ok(())
    }

    fn put(&mut self, id: String, t: NodeType, name: &str, parent: Option<String>, comps: Vec<(&str, Value)>) -> Result<String, GraphError> {
        let components = comps.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        self.insert_node(KnowledgeNode { id: id.clone(), node_type: t, name: name.to_string(), components, parent })?;
        Ok(id)
    }

    /// Adds an alias node with an associative edge to `target`.
    pub fn add_alias(&mut self, alias: &str, target: &str) -> Result<String, GraphError> {
        let target_id = self.resolve_target(target)?;
        let id = format!("al:{alias}->{target_id}");
        let comps = vec![("alias_of", Value::String(self.nodes[&target_id].name.clone()))];
        self.put(id.clone(), NodeType::Alias, alias, None, comps)?;
        self.aliases.insert(id.clone(), target_id);
        Ok(id)
    }

    fn resolve_target(&self, target: &str) -> Result<String, GraphError> {
        if let Some(n) = self.nodes.get(target) {
            if n.node_type != NodeType::Alias {
                return Ok(n.id.clone());
            }
        }
        let hits: Vec<&KnowledgeNode> =
            self.nodes.values().filter(|n| n.node_type != NodeType::Alias && n.name == target).collect();
        match hits.as_slice() {
            [one] => Ok(one.id.clone()),
            _ => Err(GraphError::UnknownTarget(target.to_string())),
        }
    }

    /// Adds a bundle's database, table, columns and derived columns.
    /// Re-applying the same bundle leaves the graph unchanged.
    pub fn upsert_bundle(&mut self, b: &KnowledgeBundle) -> Result<(), GraphError> {
        if b.database.name.is_empty() || b.table.name.is_empty() {
            return Err(GraphError::Invalid("bundle lacks database or table name".into()));
        }
        let (db, tb) = (&b.database.name, &b.table.name);
        let db_id = self.put(
            database_id(db),
            NodeType::Database,
            db,
            None,
            vec![
                ("description", json!(b.database.description)),
                ("usage", json!(b.database.usage)),
                ("tags", texts(&b.database.tags)),
            ],
        )?;
        let tb_id = self.put(
            table_id(db, tb),
            NodeType::Table,
            tb,
            Some(db_id),
            vec![
                ("description", json!(b.table.description)),
                ("usage", json!(b.table.usage)),
                ("organization", json!(b.table.organization)),
                ("key_column_names", texts(&b.table.key_column_names)),
                ("key_derived_attribute_names", texts(&b.table.key_derived_attribute_names)),
                ("tags", texts(&b.table.tags)),
            ],
        )?;
        for (name, c) in &b.columns {
            self.put(
                column_id(db, tb, name),
                NodeType::Column,
                name,
                Some(tb_id.clone()),
                vec![
                    ("description", json!(c.description)),
                    ("usage", json!(c.usage)),
                    ("type", json!(c.data_type)),
                    ("tags", texts(&c.tags)),
                ],
            )?;
            for d in &c.derived {
                self.put(
                    column_id(db, tb, &d.name),
                    NodeType::Column,
                    &d.name,
                    Some(tb_id.clone()),
                    vec![
                        ("description", json!(d.description)),
                        ("usage", json!(d.usage)),
                        ("calculation_logic", json!(d.calculation_logic)),
                        ("related_columns", texts(&d.related_columns)),
                        ("tags", texts(&d.tags)),
                        ("derived", Value::Bool(true)),
                    ],
                )?;
            }
        }
        Ok(())
    }

    pub fn upsert_glossary(&mut self, entries: &[GlossaryEntry]) -> Result<(), GraphError> {
        for e in entries {
            match e {
                GlossaryEntry::Jargon { name, description, aliases, related_columns } => {
                    let id = self.put(
                        format!("jg:{name}"),
                        NodeType::Jargon,
                        name,
                        None,
                        vec![("description", json!(description)), ("related_columns", texts(related_columns))],
                    )?;
                    for a in aliases {
                        self.add_alias(a, &id)?;
                    }
                }
                GlossaryEntry::Alias { alias, target } => {
                    self.add_alias(alias, target)?;
                }
                GlossaryEntry::Value { column, value, description } => {
                    let col = self.nodes.get(column).filter(|n| n.node_type == NodeType::Column);
                    if col.is_none() {
                        return Err(GraphError::OrphanNode { id: format!("{column}={value}"), parent: column.clone() });
                    }
                    let mut comps = vec![];
                    if !description.is_empty() {
                        comps.push(("description", json!(description)));
                    }
                    self.put(format!("val:{column}={value}"), NodeType::Value, value, Some(column.clone()), comps)?;
                }
            }
        }
        Ok(())
    }

    /// Turns sampled values of low-cardinality string columns into value
    /// nodes under existing column nodes.
    pub fn upsert_profile_values(&mut self, db: &str, table: &str, profile: &TableProfile, max_distinct: usize) -> Result<(), GraphError> {
        for c in &profile.columns {
            let col = column_id(db, table, &c.name);
            if !self.nodes.contains_key(&col) || c.distinct_count > max_distinct {
                continue;
            }
            for v in c.samples.iter().filter_map(Value::as_str) {
                self.put(format!("val:{col}={v}"), NodeType::Value, v, Some(col.clone()), vec![])?;
            }
        }
        Ok(())
    }

    /// Structural checks: parents exist, logical edges form a forest rooted
    /// at databases (or free jargon nodes), aliases point at primary nodes.
    pub fn validate(&self) -> Result<(), GraphError> {
        for n in self.nodes.values() {
            let expected_parent = match n.node_type {
                NodeType::Database | NodeType::Jargon | NodeType::Alias => None,
                NodeType::Table => Some(NodeType::Database),
                NodeType::Column => Some(NodeType::Table),
                NodeType::Value => Some(NodeType::Column),
            };
            match (&n.parent, expected_parent) {
                (None, None) => {}
                (Some(p), Some(t)) => {
                    let parent = self
                        .nodes
                        .get(p)
                        .ok_or_else(|| GraphError::OrphanNode { id: n.id.clone(), parent: p.clone() })?;
                    if parent.node_type != t {
                        return Err(GraphError::Invalid(format!("{} `{}` has a {} parent", n.node_type, n.id, parent.node_type)));
                    }
                }
                (None, Some(_)) => return Err(GraphError::OrphanNode { id: n.id.clone(), parent: String::new() }),
                (Some(_), None) => return Err(GraphError::Invalid(format!("{} `{}` cannot have a parent", n.node_type, n.id))),
            }
            if n.node_type == NodeType::Alias {
                let t = self.aliases.get(&n.id).ok_or_else(|| GraphError::Invalid(format!("alias `{}` has no target", n.id)))?;
                match self.nodes.get(t) {
                    Some(p) if p.node_type != NodeType::Alias => {}
                    _ => return Err(GraphError::UnknownTarget(t.clone())),
                }
            }
        }
        for a in self.aliases.keys() {
            if self.nodes.get(a).map(|n| n.node_type) != Some(NodeType::Alias) {
                return Err(GraphError::Invalid(format!("associative edge from non-alias `{a}`")));
            }
        }
        Ok(())
    }

    /// `(nodes.jsonl, edges.jsonl)` contents.
    pub fn export_jsonl(&self) -> (String, String) {
        let nodes = self.nodes.values().map(|n| serde_json::to_string(n).expect("node serializes") + "\n").collect();
        let edges = self.edges().iter().map(|e| serde_json::to_string(e).expect("edge serializes") + "\n").collect();
        (nodes, edges)
    }

    pub fn import_jsonl(nodes: &str, edges: &str) -> Result<Self, GraphError> {
        let mut g = KnowledgeGraph::new();
        let parse_err = |line: usize, e: serde_json::Error| GraphError::Malformed { line, message: e.to_string() };
        for (i, line) in nodes.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let n: KnowledgeNode = serde_json::from_str(line).map_err(|e| parse_err(i + 1, e))?;
            g.nodes.insert(n.id.clone(), n);
        }
        let mut logical = BTreeSet::new();
        for (i, line) in edges.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: GraphEdge = serde_json::from_str(line).map_err(|e| parse_err(i + 1, e))?;
            match e.kind {
                EdgeKind::Associative => {
                    g.aliases.insert(e.from, e.to);
                }
                EdgeKind::Logical => {
                    logical.insert((e.from, e.to));
                }
            }
        }
        let declared: BTreeSet<(String, String)> =
            g.nodes.values().filter_map(|n| n.parent.clone().map(|p| (p, n.id.clone()))).collect();
        if declared != logical {
            return Err(GraphError::Invalid("logical edges disagree with node parents".into()));
        }
        g.validate()?;
        Ok(g)
    }
}
