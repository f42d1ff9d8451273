//! Per-cell variable extraction: what a cell defines for later cells and
//! what it reads from earlier ones.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::notebook::{Cell, CellKind};

pub mod python;
pub mod sql;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for SyntaxError {}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variables {
    pub defined: BTreeSet<String>,
    pub referenced: BTreeSet<String>,
}

/// Raw dependency surface of a cell. For SQL cells `referenced` holds every
/// table-like identifier after FROM/JOIN; whether it names a notebook
/// variable is only known once definitions are resolved.
pub fn cell_surface(cell: &Cell) -> Result<Variables, SyntaxError> {
    match cell.kind {
        CellKind::Python => python::analyze(&cell.source),
        CellKind::Sql => {
            let tables = sql::table_references(&cell.source)?;
            Ok(Variables {
                defined: cell.data_variable().into_iter().collect(),
                referenced: tables,
            })
        }
        CellKind::Chart => Ok(Variables {
            defined: BTreeSet::new(),
            referenced: cell.binding.iter().cloned().collect(),
        }),
        CellKind::Markdown => Ok(Variables::default()),
    }
}

/// Variables a cell defines and the notebook variables it references.
/// `known` is the set of variables defined anywhere in the notebook; SQL
/// table identifiers that are not in it are external tables.
pub fn extract_cell_variables(cell: &Cell, known: &BTreeSet<String>) -> Result<Variables, SyntaxError> {
    let mut vars = cell_surface(cell)?;
    if cell.kind == CellKind::Sql {
        vars.referenced.retain(|t| known.contains(t));
    }
    Ok(vars)
}
