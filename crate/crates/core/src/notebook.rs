//! Notebook document, cells, edits and the `.dlnb.json` on-disk format.
//!
//! Notebooks are immutable values: [`apply_edit`] returns a new notebook plus
//! the [`CellChange`] that the dependency DAG consumes.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub type CellId = String;

#[derive(Debug, Error, PartialEq)]
pub enum NotebookError {
    #[error("malformed notebook document: {0}")]
    MalformedDocument(String),
    #[error("unknown cell `{0}`")]
    UnknownCell(CellId),
    #[error("duplicate cell id `{0}`")]
    DuplicateId(CellId),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Sql,
    Python,
    Markdown,
    Chart,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Sql => "sql",
            CellKind::Python => "python",
            CellKind::Markdown => "markdown",
            CellKind::Chart => "chart",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Text,
    TablePreview,
    ChartSpec,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Output {
    pub kind: OutputKind,
    /// Plain text for `text`/`error`, rows or a chart document otherwise.
    pub payload: Value,
    pub produced_at: DateTime<Utc>,
}

impl Output {
    fn validate(&self, cell: &str) -> Result<(), NotebookError> {
        if self.kind == OutputKind::Error {
            let empty = match &self.payload {
                Value::String(s) => s.trim().is_empty(),
                Value::Null => true,
                _ => false,
            };
            if empty {
                return Err(NotebookError::MalformedDocument(format!(
                    "cell `{cell}`: error output without a message"
                )));
            }
        }
        Ok(())
    }
}

fn is_true(b: &bool) -> bool {
    *b
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    pub kind: CellKind,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<Output>,
    /// Status of the last syntax check; omitted from the file when true.
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub syntax_ok: bool,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Cell {
    pub fn new(id: impl Into<String>, kind: CellKind, source: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            source: source.into(),
            binding: None,
            outputs: Vec::new(),
            syntax_ok: true,
            extra: Map::new(),
        }
    }

    pub fn sql(id: impl Into<String>, source: impl Into<String>, binding: Option<&str>) -> Self {
        let mut c = Self::new(id, CellKind::Sql, source);
        c.binding = binding.map(str::to_string);
        c
    }

    pub fn python(id: impl Into<String>, source: impl Into<String>) -> Self {
        Self::new(id, CellKind::Python, source)
    }

    pub fn markdown(id: impl Into<String>, source: impl Into<String>) -> Self {
        Self::new(id, CellKind::Markdown, source)
    }

    pub fn chart(id: impl Into<String>, source: impl Into<String>, binding: &str) -> Self {
        let mut c = Self::new(id, CellKind::Chart, source);
        c.binding = Some(binding.to_string());
        c
    }

    /// Variable a SQL cell's result set is stored under, or the variable a
    /// chart renders. SQL cells without an explicit binding fall back to
    /// `sql_result_<cell id>`.
    pub fn data_variable(&self) -> Option<String> {
        match self.kind {
            CellKind::Sql => Some(
                self.binding
                    .clone()
                    .unwrap_or_else(|| format!("sql_result_{}", self.id)),
            ),
            CellKind::Chart => self.binding.clone(),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), NotebookError> {
        if self.id.is_empty() {
            return Err(NotebookError::MalformedDocument("cell with empty id".into()));
        }
        if self.binding.is_some() && !matches!(self.kind, CellKind::Sql | CellKind::Chart) {
            return Err(NotebookError::MalformedDocument(format!(
                "cell `{}`: only sql and chart cells may carry a binding",
                self.id
            )));
        }
        if self.kind == CellKind::Markdown && !self.outputs.is_empty() {
            return Err(NotebookError::MalformedDocument(format!(
                "cell `{}`: markdown cells have no outputs",
                self.id
            )));
        }
        for o in &self.outputs {
            o.validate(&self.id)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notebook {
    pub id: String,
    pub revision: u64,
    pub cells: Vec<Cell>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Notebook {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            revision: 0,
            cells: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn with_cells(id: impl Into<String>, cells: Vec<Cell>) -> Self {
        let mut nb = Self::new(id);
        nb.cells = cells;
        nb
    }

    pub fn position(&self, cell_id: &str) -> Option<usize> {
        self.cells.iter().position(|c| c.id == cell_id)
    }

    pub fn cell(&self, cell_id: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.id == cell_id)
    }

    pub fn validate(&self) -> Result<(), NotebookError> {
        let mut seen = BTreeSet::new();
        for c in &self.cells {
            if !seen.insert(c.id.as_str()) {
                return Err(NotebookError::MalformedDocument(format!(
                    "duplicate cell id `{}`",
                    c.id
                )));
            }
            c.validate()?;
        }
        Ok(())
    }
}

pub fn parse_notebook(bytes: &[u8]) -> Result<Notebook, NotebookError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| NotebookError::MalformedDocument(format!("invalid UTF-8: {e}")))?;
    let nb: Notebook = serde_json::from_str(text)
        .map_err(|e| NotebookError::MalformedDocument(e.to_string()))?;
    nb.validate()?;
    Ok(nb)
}

/// Canonical form: pretty-printed JSON, sorted keys, LF newlines, trailing
/// newline.
pub fn serialize_notebook(nb: &Notebook) -> Vec<u8> {
    // Round-tripping through Value sorts keys, including flattened extras.
    let value = serde_json::to_value(nb).expect("notebook serializes");
    let mut out = serde_json::to_vec_pretty(&value).expect("value serializes");
    out.push(b'\n');
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum CellEdit {
    /// Insert at `index` (append when absent).
    Create {
        cell: Cell,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        index: Option<usize>,
    },
    Modify { cell_id: CellId, cell: Cell },
    Delete { cell_id: CellId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Create,
    Modify,
    Delete,
}

/// Event emitted for every committed edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellChange {
    pub kind: ChangeKind,
    pub cell_id: CellId,
    /// Document position of the cell (before removal, for deletes).
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before: Option<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<Cell>,
    pub revision: u64,
}

pub fn apply_edit(nb: &Notebook, edit: &CellEdit) -> Result<(Notebook, CellChange), NotebookError> {
    let mut next = nb.clone();
    let change = match edit {
        CellEdit::Create { cell, index } => {
            if nb.position(&cell.id).is_some() {
                return Err(NotebookError::DuplicateId(cell.id.clone()));
            }
            cell.validate()?;
            let at = index.unwrap_or(nb.cells.len());
            if at > nb.cells.len() {
                return Err(NotebookError::InvalidEdit(format!(
                    "insert position {at} beyond {} cells",
                    nb.cells.len()
                )));
            }
            next.cells.insert(at, cell.clone());
            CellChange {
                kind: ChangeKind::Create,
                cell_id: cell.id.clone(),
                index: at,
                before: None,
                after: Some(cell.clone()),
                revision: nb.revision + 1,
            }
        }
        CellEdit::Modify { cell_id, cell } => {
            let at = nb
                .position(cell_id)
                .ok_or_else(|| NotebookError::UnknownCell(cell_id.clone()))?;
            if &cell.id != cell_id {
                return Err(NotebookError::InvalidEdit(format!(
                    "modify of `{cell_id}` may not change the id to `{}`",
                    cell.id
                )));
            }
            cell.validate()?;
            let before = std::mem::replace(&mut next.cells[at], cell.clone());
            CellChange {
                kind: ChangeKind::Modify,
                cell_id: cell_id.clone(),
                index: at,
                before: Some(before),
                after: Some(cell.clone()),
                revision: nb.revision + 1,
            }
        }
        CellEdit::Delete { cell_id } => {
            let at = nb
                .position(cell_id)
                .ok_or_else(|| NotebookError::UnknownCell(cell_id.clone()))?;
            let before = next.cells.remove(at);
            CellChange {
                kind: ChangeKind::Delete,
                cell_id: cell_id.clone(),
                index: at,
                before: Some(before),
                after: None,
                revision: nb.revision + 1,
            }
        }
    };
    next.revision = nb.revision + 1;
    Ok((next, change))
}

/// Edits that turn `old` into `new` when applied in order: deletes for
/// removed or moved cells, then modifies and positional creates.
pub fn diff_edits(old: &Notebook, new: &Notebook) -> Vec<CellEdit> {
    let keep: BTreeSet<&str> = new.cells.iter().map(|c| c.id.as_str()).collect();
    let mut edits = Vec::new();
    let mut current: Vec<&Cell> = Vec::new();
    for c in &old.cells {
        if keep.contains(c.id.as_str()) {
            current.push(c);
        } else {
            edits.push(CellEdit::Delete { cell_id: c.id.clone() });
        }
    }
    for (i, cell) in new.cells.iter().enumerate() {
        match current.iter().position(|c| c.id == cell.id) {
            Some(j) if j == i => {
                if current[j] != cell {
                    edits.push(CellEdit::Modify { cell_id: cell.id.clone(), cell: cell.clone() });
                }
                current[j] = cell;
            }
            Some(j) => {
                edits.push(CellEdit::Delete { cell_id: cell.id.clone() });
                current.remove(j);
                edits.push(CellEdit::Create { cell: cell.clone(), index: Some(i) });
                current.insert(i, cell);
            }
            None => {
                edits.push(CellEdit::Create { cell: cell.clone(), index: Some(i) });
                current.insert(i, cell);
            }
        }
    }
    edits
}
