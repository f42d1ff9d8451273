use nbi_wasm::{build_dag_json, render_dsl_json, retrieve_context_json};
use serde_json::{json, Value};

fn notebook() -> String {
    json!({
        "id": "demo",
        "revision": 0,
        "cells": [
            {"id": "c1", "kind": "sql", "source": "SELECT * FROM sales", "binding": "sales_df"},
            {"id": "c2", "kind": "python", "source": "monthly = sales_df.groupby('ftime').sum()"},
            {"id": "c3", "kind": "python", "source": "print(monthly)"},
            {"id": "c4", "kind": "markdown", "source": "# Revenue notes"}
        ]
    })
    .to_string()
}

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn dag_links_definitions_to_uses() {
    let v = parse(&build_dag_json(&notebook()).unwrap());
    let edges: Vec<(String, String)> = v["edges"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["from"].as_str().unwrap().into(), e["to"].as_str().unwrap().into()))
        .collect();
    assert!(edges.contains(&("c1".into(), "c2".into())));
    assert!(edges.contains(&("c2".into(), "c3".into())));
    assert_eq!(v["nodes"].as_array().unwrap().len(), 4);
}

#[test]
fn cell_scope_context_follows_ancestors() {
    let scope = json!({"level": "cell", "anchor_cell": "c3", "task_type": "nl2dscode"}).to_string();
    let out = retrieve_context_json(&notebook(), &scope, "plot monthly revenue").unwrap();
    assert!(out.contains("c2"), "{out}");
}

#[test]
fn notebook_scope_without_variable_is_an_error() {
    let scope = json!({"level": "notebook", "task_type": "nl2sql"}).to_string();
    assert!(retrieve_context_json(&notebook(), &scope, "total revenue").is_err());
}

#[test]
fn dsl_renders_sql_and_chart() {
    let dsl = r#"{"ConditionList":[],"DimensionList":[{"column":"region","type":"categorical"}],"MeasureList":[{"aggregation":"sum","column":"revenue"}]}"#;
    let v = parse(&render_dsl_json(dsl, "sales").unwrap());
    let sql = v["sql"].as_str().unwrap();
    assert!(sql.contains("region") && sql.contains("revenue") && sql.contains("sales"), "{sql}");
    assert!(v["chart"].is_object());
}

#[test]
fn invalid_inputs_report_errors() {
    assert!(build_dag_json("{").unwrap_err().starts_with("notebook"));
    assert!(render_dsl_json(r#"{"MeasureList":"x"}"#, "sales").is_err());
}
