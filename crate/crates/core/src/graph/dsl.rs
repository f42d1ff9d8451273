//! DSL specification: structural validation, translation from a query, and
//! rule-based rendering to SQL and to a declarative chart spec.
//!
//! The validator below and the shipped schema document (`DSL_SCHEMA`)
//! describe the same language; tests check that they agree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::retrieve::ScoredNode;
use super::{KnowledgeGraph, NodeType};
use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::knowledge::{ProfileInterpretation, TableProfile};
use crate::text::extract_json;

pub const DSL_SCHEMA_ID: &str = "dsl.v1";
pub const DSL_SCHEMA: &str = include_str!("../../schemas/dsl.v1.schema.json");
pub const TAG_TRANSLATE: &str = "graph.translate_dsl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Avg,
    Count,
    Min,
    Max,
    CountDistinct,
}

impl Aggregation {
    pub const ALL: [Aggregation; 6] = [
        Aggregation::Sum,
        Aggregation::Avg,
        Aggregation::Count,
        Aggregation::Min,
        Aggregation::Max,
        Aggregation::CountDistinct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Sum => "sum",
            Aggregation::Avg => "avg",
            Aggregation::Count => "count",
            Aggregation::Min => "min",
            Aggregation::Max => "max",
            Aggregation::CountDistinct => "count_distinct",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Aggregation::ALL.into_iter().find(|a| a.as_str() == s)
    }

    fn vega(self) -> &'static str {
        match self {
            Aggregation::Avg => "mean",
            Aggregation::CountDistinct => "distinct",
            other => other.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measure {
    pub column: String,
    pub aggregation: Aggregation,
}

impl Measure {
    /// Output column name in rendered SQL.
    pub fn alias(&self) -> String {
        if self.column == "*" {
            "count_all".to_string()
        } else {
            format!("{}_{}", self.aggregation.as_str(), self.column)
        }
    }

    pub fn sql(&self) -> String {
        match self.aggregation {
            Aggregation::CountDistinct => format!("COUNT(DISTINCT {})", self.column),
            a => format!("{}({})", a.as_str().to_uppercase(), self.column),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionType {
    Categorical,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub column: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub dim_type: Option<DimensionType>,
}

impl Dimension {
    /// Declared type, or a name-based guess for undeclared dimensions.
    pub fn is_temporal(&self) -> bool {
        match self.dim_type {
            Some(t) => t == DimensionType::Temporal,
            None => {
                let lower = self.column.to_ascii_lowercase();
                lower.split('_').any(|p| matches!(p, "date" | "time" | "day" | "month" | "year" | "week" | "dt"))
                    || lower.ends_with("time")
                    || lower.ends_with("date")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub column: String,
    pub operator: String,
    pub value: Value,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortDirection {
    #[default]
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub column: String,
    #[serde(default)]
    pub direction: SortDirection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DslSpec {
    #[serde(rename = "MeasureList")]
    pub measures: Vec<Measure>,
    #[serde(rename = "DimensionList")]
    pub dimensions: Vec<Dimension>,
    #[serde(rename = "ConditionList")]
    pub conditions: Vec<Condition>,
    #[serde(rename = "OrderList", default, skip_serializing_if = "Vec::is_empty")]
    pub order: Vec<Order>,
    #[serde(rename = "LimitN", default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<u64>,
}

impl DslSpec {
    /// Every column the spec refers to.
    pub fn columns(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        out.extend(self.measures.iter().map(|m| m.column.as_str()).filter(|c| *c != "*"));
        out.extend(self.dimensions.iter().map(|d| d.column.as_str()));
        out.extend(self.conditions.iter().map(|c| c.column.as_str()));
        out.extend(self.order.iter().map(|o| o.column.as_str()));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Binary comparison rendered with the given SQL symbol.
    Compare(&'static str),
    In,
    Between,
    Like,
}

/// Condition operators the DSL accepts, keyed by lowercase name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorRegistry {
    ops: BTreeMap<String, OperatorKind>,
}

impl Default for OperatorRegistry {
    fn default() -> Self {
        let mut r = OperatorRegistry { ops: BTreeMap::new() };
        for sym in ["=", "!=", "<", "<=", ">", ">="] {
            r.register(sym, OperatorKind::Compare(sym));
        }
        r.register("in", OperatorKind::In);
        r.register("between", OperatorKind::Between);
        r.register("like", OperatorKind::Like);
        r
    }
}

impl OperatorRegistry {
    pub fn empty() -> Self {
        OperatorRegistry { ops: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, kind: OperatorKind) {
        self.ops.insert(name.to_ascii_lowercase(), kind);
    }

    pub fn get(&self, name: &str) -> Option<OperatorKind> {
        self.ops.get(&name.to_ascii_lowercase()).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.ops.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DslError {
    #[error("DSL validation failed: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Validation(Vec<FieldError>),
    #[error("column `{0}` is not in the retrieved knowledge")]
    UnresolvedColumn(String),
    #[error("unsupported operator `{0}`")]
    UnsupportedOperator(String),
    #[error("spec has no measures to chart")]
    UnchartableSpec,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn ident_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").expect("static regex"))
}

struct Checker<'a> {
    errors: Vec<FieldError>,
    registry: &'a OperatorRegistry,
}

impl Checker<'_> {
    fn err(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(FieldError { path: path.into(), message: message.into() });
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str, allowed: &[&str], required: &[&str]) -> Option<&'v Map<String, Value>> {
        let Some(o) = v.as_object() else {
            self.err(path, "expected an object");
            return None;
        };
        for k in o.keys().filter(|k| !allowed.contains(&k.as_str())) {
            self.err(format!("{path}.{k}"), "unknown field");
        }
        for k in required.iter().filter(|k| !o.contains_key(**k)) {
            self.err(format!("{path}.{k}"), "missing required field");
        }
        Some(o)
    }

    fn column(&mut self, o: &Map<String, Value>, path: &str, allow_star: bool) -> Option<String> {
        let v = o.get("column")?;
        match v.as_str() {
            Some("*") if allow_star => Some("*".into()),
            Some(s) if ident_re().is_match(s) => Some(s.to_string()),
            Some(_) => {
                self.err(format!("{path}.column"), "must be an identifier");
                None
            }
            None => {
                self.err(format!("{path}.column"), "expected a string");
                None
            }
        }
    }

    fn array<'v>(&mut self, root: &'v Map<String, Value>, key: &str) -> &'v [Value] {
        match root.get(key) {
            Some(Value::Array(items)) => items,
            Some(_) => {
                self.err(format!("$.{key}"), "expected an array");
                &[]
            }
            None => &[],
        }
    }

    fn measure(&mut self, v: &Value, path: &str) -> Option<Measure> {
        let o = self.object(v, path, &["column", "aggregation"], &["column", "aggregation"])?;
        let column = self.column(o, path, true);
        let aggregation = match o.get("aggregation").map(|a| a.as_str().and_then(Aggregation::parse)) {
            Some(Some(a)) => Some(a),
            Some(None) => {
                self.err(format!("{path}.aggregation"), "unknown aggregation");
                None
            }
            None => None,
        };
        let (column, aggregation) = (column?, aggregation?);
        if column == "*" && aggregation != Aggregation::Count {
            self.err(format!("{path}.aggregation"), "`*` only supports count");
            return None;
        }
        Some(Measure { column, aggregation })
    }

    fn dimension(&mut self, v: &Value, path: &str) -> Option<Dimension> {
        let o = self.object(v, path, &["column", "type"], &["column"])?;
        let column = self.column(o, path, false);
        let dim_type = match o.get("type") {
            None => None,
            Some(t) => match t.as_str() {
                Some("categorical") => Some(DimensionType::Categorical),
                Some("temporal") => Some(DimensionType::Temporal),
                _ => {
                    self.err(format!("{path}.type"), "must be categorical or temporal");
                    return None;
                }
            },
        };
        Some(Dimension { column: column?, dim_type })
    }

    fn condition(&mut self, v: &Value, path: &str) -> Option<Condition> {
        let o = self.object(v, path, &["column", "operator", "value"], &["column", "operator", "value"])?;
        let column = self.column(o, path, false);
        let op_name = o.get("operator").and_then(Value::as_str);
        let kind = match (o.get("operator"), op_name.and_then(|n| self.registry.get(n))) {
            (None, _) => None,
            (Some(_), Some(k)) => Some(k),
            (Some(_), None) => {
                self.err(format!("{path}.operator"), "unknown operator");
                None
            }
        };
        let value = o.get("value")?;
        let scalar = |v: &Value| v.is_string() || v.is_number() || v.is_boolean();
        let vpath = format!("{path}.value");
        match kind? {
            OperatorKind::Compare(_) if !scalar(value) => self.err(vpath, "expected a string, number or boolean"),
            OperatorKind::Like if !value.is_string() => self.err(vpath, "expected a string pattern"),
            OperatorKind::In => match value.as_array() {
                Some(items) if !items.is_empty() && items.iter().all(scalar) => {}
                _ => self.err(vpath, "expected a nonempty array of scalars"),
            },
            OperatorKind::Between => match value.as_array() {
                Some(items) if items.len() == 2 && items.iter().all(scalar) => {}
                _ => self.err(vpath, "expected an array of two scalars"),
            },
            _ => {}
        }
        Some(Condition { column: column?, operator: op_name?.to_ascii_lowercase(), value: value.clone() })
    }

    fn order(&mut self, v: &Value, path: &str) -> Option<Order> {
        let o = self.object(v, path, &["column", "direction"], &["column"])?;
        let column = self.column(o, path, false);
        let direction = match o.get("direction") {
            None => SortDirection::Asc,
            Some(d) => match d.as_str() {
                Some("asc") => SortDirection::Asc,
                Some("desc") => SortDirection::Desc,
                _ => {
                    self.err(format!("{path}.direction"), "must be asc or desc");
                    return None;
                }
            },
        };
        Some(Order { column: column?, direction })
    }
}

/// Structural validation. Returns every field-level error found, not just
/// the first.
pub fn validate_dsl(v: &Value, registry: &OperatorRegistry) -> Result<DslSpec, Vec<FieldError>> {
    let mut c = Checker { errors: Vec::new(), registry };
    let top = ["MeasureList", "DimensionList", "ConditionList", "OrderList", "LimitN"];
    let Some(root) = c.object(v, "$", &top, &top[..3]) else {
        return Err(c.errors);
    };
    let root = root.clone();
    let mut spec = DslSpec::default();
    for (i, m) in c.array(&root, "MeasureList").iter().enumerate() {
        spec.measures.extend(c.measure(m, &format!("$.MeasureList[{i}]")));
    }
    for (i, d) in c.array(&root, "DimensionList").iter().enumerate() {
        spec.dimensions.extend(c.dimension(d, &format!("$.DimensionList[{i}]")));
    }
    for (i, d) in c.array(&root, "ConditionList").iter().enumerate() {
        spec.conditions.extend(c.condition(d, &format!("$.ConditionList[{i}]")));
    }
    for (i, d) in c.array(&root, "OrderList").iter().enumerate() {
        spec.order.extend(c.order(d, &format!("$.OrderList[{i}]")));
    }
    match root.get("LimitN") {
        None => {}
        Some(n) => match n.as_u64() {
            Some(k) if k >= 1 => spec.limit = Some(k),
            _ => c.err("$.LimitN", "expected a positive integer"),
        },
    }
    if c.errors.is_empty() {
        Ok(spec)
    } else {
        Err(c.errors)
    }
}

/// Column knowledge offered to the translator: from retrieved graph nodes,
/// or from a table profile when retrieval came back empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSource {
    pub table: Option<String>,
    /// `(column, description)` in ranking order.
    pub columns: Vec<(String, String)>,
    /// Extra context lines: values, jargon, table descriptions.
    pub notes: Vec<String>,
}

impl KnowledgeSource {
    pub fn from_nodes(g: &KnowledgeGraph, nodes: &[ScoredNode]) -> Self {
        let mut out = KnowledgeSource::default();
        let mut seen = BTreeSet::new();
        let describe = |id: &str| g.node(id).and_then(|n| n.component_text("description")).unwrap_or_default();
        for s in nodes {
            let Some(n) = g.node(&s.node_id) else { continue };
            match n.node_type {
                NodeType::Column => {
                    if seen.insert(n.name.clone()) {
                        let mut d = describe(&n.id);
                        if let Some(logic) = n.component_text("calculation_logic") {
                            d.push_str(&format!(" (calculated as {logic})"));
                        }
                        out.columns.push((n.name.clone(), d));
                    }
                    if out.table.is_none() {
                        out.table = n.parent.as_deref().and_then(|p| g.node(p)).map(|t| t.name.clone());
                    }
                }
                NodeType::Value => {
                    let col = n.parent.as_deref().and_then(|p| g.node(p));
                    if let Some(col) = col {
                        out.notes.push(format!("'{}' is a value of column {}", n.name, col.name));
                        if seen.insert(col.name.clone()) {
                            out.columns.push((col.name.clone(), describe(&col.id)));
                        }
                    }
                }
                NodeType::Table | NodeType::Database | NodeType::Jargon => {
                    out.notes.push(format!("{} {}: {}", n.node_type, n.name, describe(&n.id)));
                    if n.node_type == NodeType::Table && out.table.is_none() {
                        out.table = Some(n.name.clone());
                    }
                }
                NodeType::Alias => {}
            }
        }
        out
    }

    pub fn from_profile(table: &str, profile: &TableProfile, interp: &ProfileInterpretation) -> Self {
        let mut out = KnowledgeSource { table: Some(table.to_string()), ..Default::default() };
        out.notes.push(format!("table {table}: {}", interp.table_description));
        for (c, (name, desc)) in profile.columns.iter().zip(&interp.column_descriptions) {
            let samples: Vec<String> = c.samples.iter().take(3).map(|v| v.to_string()).collect();
            out.columns.push((name.clone(), format!("{desc} [{:?}; e.g. {}]", c.inferred_type, samples.join(", "))));
        }
        out
    }

    pub fn column_names(&self) -> BTreeSet<&str> {
        self.columns.iter().map(|(c, _)| c.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        if let Some(t) = &self.table {
            s.push_str(&format!("Table: {t}\n"));
        }
        s.push_str("Columns:\n");
        for (c, d) in &self.columns {
            s.push_str(&format!("  - {c}: {d}\n"));
        }
        for n in &self.notes {
            s.push_str(&format!("Note: {n}\n"));
        }
        s
    }
}

const TRANSLATE_EXAMPLE: &str = r#"Question: average order amount per region in 2023 (2023-01-01..2023-12-31), highest first
DSL: {"MeasureList": [{"column": "order_amount", "aggregation": "avg"}], "DimensionList": [{"column": "region", "type": "categorical"}], "ConditionList": [{"column": "order_date", "operator": "between", "value": ["2023-01-01", "2023-12-31"]}], "OrderList": [{"column": "order_amount", "direction": "desc"}]}"#;

/// Validates a model reply as a DSL spec, then checks that every column is
/// known.
pub fn parse_dsl_reply(reply: &str, known: &BTreeSet<&str>, registry: &OperatorRegistry) -> Result<DslSpec, DslError> {
    let v = extract_json(reply).ok_or_else(|| {
        DslError::Validation(vec![FieldError { path: "$".into(), message: "no JSON object in reply".into() }])
    })?;
    let spec = validate_dsl(&v, registry).map_err(DslError::Validation)?;
    if let Some(c) = spec.columns().into_iter().find(|c| !known.contains(c)) {
        return Err(DslError::UnresolvedColumn(c.to_string()));
    }
    Ok(spec)
}

pub fn translate_to_dsl(
    q: &str,
    knowledge: &KnowledgeSource,
    registry: &OperatorRegistry,
    gateway: &Gateway,
) -> Result<DslSpec, DslError> {
    let ops: Vec<&str> = registry.names().collect();
    let prompt = format!(
        "Translate the question into a DSL specification. MeasureList holds numerical columns with an \
         aggregation ({}), DimensionList holds categorical or temporal grouping columns, ConditionList holds \
         filters with operators ({}). Use only the columns listed below. Date ranges written start..end become \
         between conditions.\n\nExample:\n{TRANSLATE_EXAMPLE}\n\nKnowledge:\n{}\nQuestion: {q}\nDSL:",
        Aggregation::ALL.map(Aggregation::as_str).join(", "),
        ops.join(", "),
        knowledge.render()
    );
    let reply = gateway.complete(&CompletionRequest::new(TAG_TRANSLATE, prompt).with_schema(DSL_SCHEMA_ID))?;
    parse_dsl_reply(&reply, &knowledge.column_names(), registry)
}

fn literal(v: &Value) -> String {
    match v {
        Value::String(s) => format!("'{}'", s.replace('\'', "''")),
        Value::Bool(true) => "TRUE".into(),
        Value::Bool(false) => "FALSE".into(),
        other => other.to_string(),
    }
}

fn condition_sql(c: &Condition, registry: &OperatorRegistry) -> Result<String, DslError> {
    let kind = registry.get(&c.operator).ok_or_else(|| DslError::UnsupportedOperator(c.operator.clone()))?;
    let items = || c.value.as_array().map(|a| a.iter().map(literal).collect::<Vec<_>>()).unwrap_or_default();
    Ok(match kind {
        OperatorKind::Compare(sym) => format!("{} {sym} {}", c.column, literal(&c.value)),
        OperatorKind::Like => format!("{} LIKE {}", c.column, literal(&c.value)),
        OperatorKind::In => format!("{} IN ({})", c.column, items().join(", ")),
        OperatorKind::Between => {
            let v = items();
            if v.len() != 2 {
                return Err(DslError::UnsupportedOperator(format!("{} with {} bounds", c.operator, v.len())));
            }
            format!("{} BETWEEN {} AND {}", c.column, v[0], v[1])
        }
    })
}

/// Rule-based SQL rendering: dimensions then measures in the select list,
/// conditions as WHERE conjuncts, GROUP BY on dimensions when aggregating.
pub fn dsl_to_sql(spec: &DslSpec, table: &str, registry: &OperatorRegistry) -> Result<String, DslError> {
    let mut select: Vec<String> = spec.dimensions.iter().map(|d| d.column.clone()).collect();
    select.extend(spec.measures.iter().map(|m| format!("{} AS {}", m.sql(), m.alias())));
    if select.is_empty() {
        select.push("*".into());
    }
    let mut sql = format!("SELECT {} FROM {table}", select.join(", "));
    if !spec.conditions.is_empty() {
        let conds = spec.conditions.iter().map(|c| condition_sql(c, registry)).collect::<Result<Vec<_>, _>>()?;
        sql.push_str(&format!(" WHERE {}", conds.join(" AND ")));
    }
    if !spec.dimensions.is_empty() && !spec.measures.is_empty() {
        let dims: Vec<&str> = spec.dimensions.iter().map(|d| d.column.as_str()).collect();
        sql.push_str(&format!(" GROUP BY {}", dims.join(", ")));
    }
    if !spec.order.is_empty() {
        let items: Vec<String> = spec
            .order
            .iter()
            .map(|o| {
                let target = spec.measures.iter().find(|m| m.column == o.column).map(Measure::alias).unwrap_or(o.column.clone());
                let dir = match o.direction {
                    SortDirection::Asc => "ASC",
                    SortDirection::Desc => "DESC",
                };
                format!("{target} {dir}")
            })
            .collect();
        sql.push_str(&format!(" ORDER BY {}", items.join(", ")));
    }
    if let Some(n) = spec.limit {
        sql.push_str(&format!(" LIMIT {n}"));
    }
    Ok(sql)
}

pub const CHART_SCHEMA_URL: &str = "https://vega.github.io/schema/vega-lite/v5.json";

fn measure_encoding(m: &Measure) -> Value {
    let mut e = json!({"field": m.alias(), "type": "quantitative", "aggregate": m.aggregation.vega(), "title": m.alias()});
    if m.column != "*" {
        e["source_column"] = json!(m.column);
    }
    e
}

/// Chart spec over the rows produced by [`dsl_to_sql`]: one temporal
/// dimension gives a line, one categorical dimension a bar, two or more
/// measures without dimensions a scatter.
pub fn dsl_to_vis(spec: &DslSpec) -> Result<Value, DslError> {
    let m0 = spec.measures.first().ok_or(DslError::UnchartableSpec)?;
    let mut encoding = Map::new();
    let mark = match spec.dimensions.first() {
        Some(d) => {
            let temporal = d.is_temporal();
            encoding.insert(
                "x".into(),
                json!({"field": d.column, "type": if temporal { "temporal" } else { "nominal" }}),
            );
            encoding.insert("y".into(), measure_encoding(m0));
            if let Some(d2) = spec.dimensions.get(1) {
                encoding.insert("color".into(), json!({"field": d2.column, "type": "nominal"}));
            }
            if temporal {
                "line"
            } else {
                "bar"
            }
        }
        None if spec.measures.len() >= 2 => {
            encoding.insert("x".into(), measure_encoding(m0));
            encoding.insert("y".into(), measure_encoding(&spec.measures[1]));
            if let Some(m2) = spec.measures.get(2) {
                encoding.insert("size".into(), measure_encoding(m2));
            }
            "point"
        }
        None => {
            encoding.insert("y".into(), measure_encoding(m0));
            "bar"
        }
    };
    Ok(json!({
        "$schema": CHART_SCHEMA_URL,
        "data": {"name": "table"},
        "mark": {"type": mark},
        "encoding": Value::Object(encoding),
    }))
}

/// Minimal structural check for chart specs produced or consumed by the
/// engine.
pub fn validate_chart_spec(v: &Value) -> Result<(), String> {
    let mark = v
        .pointer("/mark/type")
        .or_else(|| v.get("mark"))
        .and_then(Value::as_str)
        .ok_or("missing mark")?;
    if !["bar", "line", "point", "area", "arc", "text"].contains(&mark) {
        return Err(format!("unsupported mark `{mark}`"));
    }
    let enc = v.get("encoding").and_then(Value::as_object).ok_or("missing encoding")?;
    if !enc.contains_key("x") && !enc.contains_key("y") {
        return Err("encoding needs x or y".into());
    }
    for (channel, e) in enc {
        let field = e.get("field").and_then(Value::as_str).unwrap_or("");
        let ty = e.get("type").and_then(Value::as_str).unwrap_or("");
        if field.is_empty() {
            return Err(format!("{channel}: missing field"));
        }
        if !["quantitative", "nominal", "ordinal", "temporal"].contains(&ty) {
            return Err(format!("{channel}: bad type `{ty}`"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> OperatorRegistry {
        OperatorRegistry::default()
    }

    fn tencent() -> DslSpec {
        validate_dsl(
            &json!({
                "MeasureList": [{"column": "shouldincome_after", "aggregation": "sum"}],
                "DimensionList": [],
                "ConditionList": [
                    {"column": "prod_class4_name", "operator": "=", "value": "TencentBI"},
                    {"column": "ftime", "operator": "between", "value": ["2024-01-01", "2024-12-31"]}
                ]
            }),
            &reg(),
        )
        .unwrap()
    }

    #[test]
    fn tencent_sql() {
        assert_eq!(
            dsl_to_sql(&tencent(), "t", &reg()).unwrap(),
            "SELECT SUM(shouldincome_after) AS sum_shouldincome_after FROM t WHERE prod_class4_name = 'TencentBI' \
             AND ftime BETWEEN '2024-01-01' AND '2024-12-31'"
        );
    }

    #[test]
    fn group_by_follows_dimension_order() {
        let mut s = tencent();
        s.dimensions = vec![
            Dimension { column: "region".into(), dim_type: None },
            Dimension { column: "channel".into(), dim_type: None },
        ];
        s.conditions.clear();
        s.order = vec![Order { column: "shouldincome_after".into(), direction: SortDirection::Desc }];
        s.limit = Some(5);
        assert_eq!(
            dsl_to_sql(&s, "t", &reg()).unwrap(),
            "SELECT region, channel, SUM(shouldincome_after) AS sum_shouldincome_after FROM t GROUP BY region, channel \
             ORDER BY sum_shouldincome_after DESC LIMIT 5"
        );
    }

    #[test]
    fn unknown_top_level_field() {
        let errs = validate_dsl(&json!({"MeasureList": [], "DimensionList": [], "ConditionList": [], "FooList": []}), &reg())
            .unwrap_err();
        assert_eq!(errs, [FieldError { path: "$.FooList".into(), message: "unknown field".into() }]);
    }

    #[test]
    fn every_error_reported() {
        let errs = validate_dsl(
            &json!({"MeasureList": [{"column": "a b", "aggregation": "median"}], "ConditionList": [{"column": "x", "operator": "in", "value": []}]}),
            &reg(),
        )
        .unwrap_err();
        let paths: Vec<_> = errs.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["$.DimensionList", "$.MeasureList[0].column", "$.MeasureList[0].aggregation", "$.ConditionList[0].value"]);
    }

    #[test]
    fn unsupported_operator_at_render() {
        let mut s = tencent();
        s.conditions[0].operator = "regex".into();
        assert_eq!(dsl_to_sql(&s, "t", &reg()), Err(DslError::UnsupportedOperator("regex".into())));
    }

    #[test]
    fn vis_rules() {
        let mut s = tencent();
        s.dimensions = vec![Dimension { column: "prod_class4_name".into(), dim_type: Some(DimensionType::Categorical) }];
        let bar = dsl_to_vis(&s).unwrap();
        assert_eq!(bar["mark"]["type"], "bar");
        assert_eq!(bar["encoding"]["x"]["field"], "prod_class4_name");
        assert_eq!(bar["encoding"]["y"]["aggregate"], "sum");
        validate_chart_spec(&bar).unwrap();

        s.dimensions = vec![Dimension { column: "ftime".into(), dim_type: None }];
        assert_eq!(dsl_to_vis(&s).unwrap()["mark"]["type"], "line");

        s.dimensions.clear();
        s.measures.push(Measure { column: "cost".into(), aggregation: Aggregation::Avg });
        assert_eq!(dsl_to_vis(&s).unwrap()["mark"]["type"], "point");

        s.measures.clear();
        assert_eq!(dsl_to_vis(&s), Err(DslError::UnchartableSpec));
    }

    #[test]
    fn unresolved_column() {
        let known: BTreeSet<&str> = ["ftime"].into();
        let reply = r#"{"MeasureList": [{"column": "ghost", "aggregation": "sum"}], "DimensionList": [], "ConditionList": []}"#;
        assert_eq!(parse_dsl_reply(reply, &known, &reg()), Err(DslError::UnresolvedColumn("ghost".into())));
    }

    #[test]
    fn literal_escaping() {
        assert_eq!(literal(&json!("O'Hara")), "'O''Hara'");
        assert_eq!(literal(&json!(2.5)), "2.5");
        assert_eq!(literal(&json!(false)), "FALSE");
    }
}
