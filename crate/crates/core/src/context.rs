//! Minimum relevant cell set for a query, plus the buffer units those cells
//! produced.
//!
//! Cell-level queries take the anchor and all its ancestors; notebook-level
//! queries take the cell that first defines the scoped variable and all its
//! descendants. Both are then filtered by task type, and Markdown cells that
//! are textually similar to the query are added back.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{InformationUnit, SharedBuffer};
use crate::dag::CellDag;
use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::notebook::{Cell, CellId, CellKind, Notebook};
use crate::text::{estimate_tokens, set_cosine, word_set};

pub const DEFAULT_MARKDOWN_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeLevel {
    Cell,
    Notebook,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskType {
    #[serde(rename = "nl2sql")]
    Nl2Sql,
    #[serde(rename = "nl2dscode")]
    Nl2DsCode,
    #[serde(rename = "nl2vis")]
    Nl2Vis,
    #[serde(rename = "nl2insight")]
    Nl2Insight,
    #[serde(rename = "other")]
    Other,
}

impl TaskType {
    pub const ALL: [TaskType; 5] =
        [TaskType::Nl2Sql, TaskType::Nl2DsCode, TaskType::Nl2Vis, TaskType::Nl2Insight, TaskType::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Nl2Sql => "nl2sql",
            TaskType::Nl2DsCode => "nl2dscode",
            TaskType::Nl2Vis => "nl2vis",
            TaskType::Nl2Insight => "nl2insight",
            TaskType::Other => "other",
        }
    }

    pub fn keeps(self, kind: CellKind) -> bool {
        match self {
            TaskType::Nl2DsCode => kind == CellKind::Python,
            TaskType::Nl2Sql => kind == CellKind::Sql,
            TaskType::Nl2Vis => matches!(kind, CellKind::Sql | CellKind::Python | CellKind::Chart),
            TaskType::Nl2Insight | TaskType::Other => true,
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        TaskType::ALL
            .into_iter()
            .find(|t| t.as_str() == lower)
            .ok_or_else(|| format!("unknown task type `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScope {
    pub level: ScopeLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_cell: Option<CellId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_variable: Option<String>,
    pub task_type: TaskType,
}

impl QueryScope {
    pub fn cell(anchor: impl Into<String>, task_type: TaskType) -> Self {
        QueryScope { level: ScopeLevel::Cell, anchor_cell: Some(anchor.into()), data_variable: None, task_type }
    }

    pub fn notebook(var: Option<&str>, task_type: TaskType) -> Self {
        QueryScope { level: ScopeLevel::Notebook, anchor_cell: None, data_variable: var.map(str::to_string), task_type }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub cells: Vec<Cell>,
    pub units: Vec<InformationUnit>,
    pub token_estimate: usize,
    /// Cell the closure was taken from: the anchor, or the first definer of
    /// the scoped variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_cell: Option<CellId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_variable: Option<String>,
}

impl ContextBundle {
    pub fn cell_ids(&self) -> Vec<&str> {
        self.cells.iter().map(|c| c.id.as_str()).collect()
    }

    /// Prompt rendering: cells in document order, then units.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            out.push_str(&format!("[{} {}]\n{}\n", c.kind.as_str(), c.id, c.source));
        }
        for u in &self.units {
            out.push_str(&format!("<{} {} {}> {}\n", u.role, u.action, u.data_source, u.description));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    pub markdown_threshold: f64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig { markdown_threshold: DEFAULT_MARKDOWN_THRESHOLD }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ContextError {
    #[error("variable `{0}` is not defined in the notebook")]
    UnknownVariable(String),
    #[error("unknown cell `{0}`")]
    UnknownCell(CellId),
    #[error("cell-level scope requires an anchor cell")]
    MissingAnchor,
    #[error("variable prediction needs a gateway")]
    NoGateway,
    #[error("variable prediction failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("model predicted `{0}`, which is not a notebook variable")]
    InvalidPrediction(String),
}

/// Keeps the cells a task type can use, in order. `keep` is never dropped.
pub fn prune_by_task(cells: &[Cell], task: TaskType, keep: Option<&str>) -> Vec<Cell> {
    cells
        .iter()
        .filter(|c| task.keeps(c.kind) || keep == Some(c.id.as_str()))
        .cloned()
        .collect()
}

/// Textual similarity between a Markdown cell and the query.
pub fn markdown_similarity(source: &str, query: &str) -> f64 {
    set_cosine(&word_set(source), &word_set(query))
}

/// Asks the model which notebook variable a query is about. A single
/// candidate is returned without a call.
pub fn predict_variable(dag: &CellDag, query: &str, gateway: Option<&Gateway>) -> Result<String, ContextError> {
    let candidates: Vec<&String> = dag.defined_variables().collect();
    match candidates.as_slice() {
        [] => return Err(ContextError::UnknownVariable(String::new())),
        [only] => return Ok((*only).clone()),
        _ => {}
    }
    let gateway = gateway.ok_or(ContextError::NoGateway)?;
    let list: Vec<&str> = candidates.iter().map(|s| s.as_str()).collect();
    let prompt = format!(
        "Pick the notebook data variable the user's question is about.\n\
         Variables: {}\nQuestion: {query}\nAnswer with the variable name only.",
        list.join(", ")
    );
    let reply = gateway.complete(&CompletionRequest::new("context.predict_variable", prompt))?;
    let name = reply
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !(c.is_alphanumeric() || c == '_'));
    if list.contains(&name) {
        Ok(name.to_string())
    } else {
        Err(ContextError::InvalidPrediction(reply.trim().to_string()))
    }
}

pub fn retrieve_context(
    dag: &CellDag,
    nb: &Notebook,
    scope: &QueryScope,
    query: &str,
    buffer: &SharedBuffer,
    gateway: Option<&Gateway>,
    cfg: &ContextConfig,
) -> Result<ContextBundle, ContextError> {
    let (root, variable, mut members) = match scope.level {
        ScopeLevel::Cell => {
            let anchor = scope.anchor_cell.as_ref().ok_or(ContextError::MissingAnchor)?;
            if nb.cell(anchor).is_none() || !dag.contains(anchor) {
                return Err(ContextError::UnknownCell(anchor.clone()));
            }
            (anchor.clone(), scope.data_variable.clone(), dag.ancestors(anchor))
        }
        ScopeLevel::Notebook => {
            let var = match &scope.data_variable {
                Some(v) => v.clone(),
                None => predict_variable(dag, query, gateway)?,
            };
            let root = dag.first_definer(&var).cloned().ok_or_else(|| ContextError::UnknownVariable(var.clone()))?;
            let members = dag.descendants(&root);
            (root, Some(var), members)
        }
    };
    members.insert(root.clone());

    let closure: Vec<Cell> = nb.cells.iter().filter(|c| members.contains(&c.id)).cloned().collect();
    let kept: BTreeSet<CellId> =
        prune_by_task(&closure, scope.task_type, Some(&root)).into_iter().map(|c| c.id).collect();

    let cells: Vec<Cell> = nb
        .cells
        .iter()
        .filter(|c| {
            kept.contains(&c.id)
                || (c.kind == CellKind::Markdown && markdown_similarity(&c.source, query) >= cfg.markdown_threshold)
        })
        .cloned()
        .collect();
    Ok(finish(cells, buffer, Some(root), variable))
}

/// Every cell in the notebook, for baseline comparisons.
pub fn full_context(nb: &Notebook, buffer: &SharedBuffer) -> ContextBundle {
    finish(nb.cells.clone(), buffer, None, None)
}

fn finish(cells: Vec<Cell>, buffer: &SharedBuffer, root_cell: Option<CellId>, data_variable: Option<String>) -> ContextBundle {
    let ids: BTreeSet<&str> = cells.iter().map(|c| c.id.as_str()).collect();
    let units: Vec<InformationUnit> = buffer
        .live()
        .into_iter()
        .filter(|u| u.origin_cell.as_deref().is_some_and(|c| ids.contains(c)))
        .collect();
    let token_estimate = cells.iter().map(|c| estimate_tokens(&c.source)).sum::<usize>()
        + units.iter().map(|u| estimate_tokens(&u.description) + estimate_tokens(&u.content.render())).sum::<usize>();
    ContextBundle { cells, units, token_estimate, root_cell, data_variable }
}
