//! In-memory tabular data shared by profiling and the SQL tool.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    #[serde(default)]
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Value>>) -> Self {
        Table { columns, rows }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, idx: usize) -> impl Iterator<Item = &Value> {
        self.rows.iter().map(move |r| r.get(idx).unwrap_or(&Value::Null))
    }

    /// First `n` rows as a JSON preview `{columns, rows}`.
    pub fn preview(&self, n: usize) -> Value {
        serde_json::json!({
            "columns": self.columns,
            "rows": self.rows.iter().take(n).collect::<Vec<_>>(),
            "row_count": self.rows.len(),
        })
    }
}
