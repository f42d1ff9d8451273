//! Browser bindings: cell dependency analysis, context retrieval and DSL
//! rendering, all offline. Each export takes and returns JSON strings; the
//! `*_json` functions are the same operations for native callers.

use nbi_core::agent::SharedBuffer;
use nbi_core::graph::{dsl_to_sql, dsl_to_vis, validate_dsl, DslError, OperatorRegistry};
use nbi_core::notebook::parse_notebook;
use nbi_core::{retrieve_context, CellDag, QueryScope};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn notebook(text: &str) -> Result<nbi_core::Notebook, String> {
    parse_notebook(text.as_bytes()).map_err(|e| format!("notebook: {e}"))
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

/// `{nodes, edges, var_defs, diagnostics}` for a notebook document.
pub fn build_dag_json(notebook_json: &str) -> Result<String, String> {
    Ok(pretty(&CellDag::build(&notebook(notebook_json)?).view()))
}

/// Context bundle for `query` under `scope`. Notebook-level scopes must
/// name their data variable since no model is available to predict it.
pub fn retrieve_context_json(notebook_json: &str, scope_json: &str, query: &str) -> Result<String, String> {
    let nb = notebook(notebook_json)?;
    let scope: QueryScope = serde_json::from_str(scope_json).map_err(|e| format!("scope: {e}"))?;
    let bundle = retrieve_context(&CellDag::build(&nb), &nb, &scope, query, &SharedBuffer::default(), None, &Default::default())
        .map_err(|e| e.to_string())?;
    Ok(pretty(&bundle))
}

/// Validates a DSL specification and renders `{sql, chart}` over `table`.
/// `chart` is null when the specification has nothing to plot.
pub fn render_dsl_json(dsl_json: &str, table: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(dsl_json).map_err(|e| format!("dsl: {e}"))?;
    let registry = OperatorRegistry::default();
    let spec = validate_dsl(&v, &registry).map_err(|errs| {
        errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
    })?;
    let sql = dsl_to_sql(&spec, table, &registry).map_err(|e| e.to_string())?;
    let chart = match dsl_to_vis(&spec) {
        Ok(c) => c,
        Err(DslError::UnchartableSpec) => Value::Null,
        Err(e) => return Err(e.to_string()),
    };
    Ok(pretty(&json!({"sql": sql, "chart": chart})))
}

#[wasm_bindgen]
pub fn build_dag(notebook_json: &str) -> Result<String, JsError> {
    build_dag_json(notebook_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn retrieve_context_for(notebook_json: &str, scope_json: &str, query: &str) -> Result<String, JsError> {
    retrieve_context_json(notebook_json, scope_json, query).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn render_dsl(dsl_json: &str, table: &str) -> Result<String, JsError> {
    render_dsl_json(dsl_json, table).map_err(|e| JsError::new(&e))
}
