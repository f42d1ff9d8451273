mod common;

use std::collections::BTreeSet;

use common::{clauses, dsl_fixtures, expected_clauses, sales_columns};
use nbi_core::graph::{dsl_to_sql, dsl_to_vis, parse_dsl_reply, validate_chart_spec, DslError, OperatorRegistry, DSL_SCHEMA};
use serde_json::Value;

#[test]
fn malformed_fixtures_fail_with_field_errors() {
    let fixtures = dsl_fixtures("malformed.jsonl");
    assert_eq!(fixtures.len(), 25);
    let reg = OperatorRegistry::default();
    for f in fixtures {
        match parse_dsl_reply(&f.reply, &sales_columns(), &reg) {
            Err(DslError::Validation(errs)) => {
                let got: BTreeSet<&str> = errs.iter().map(|e| e.path.as_str()).collect();
                let want: BTreeSet<&str> = f.expect_paths.iter().map(String::as_str).collect();
                assert_eq!(got, want, "{}: {errs:?}", f.name);
                assert!(errs.iter().all(|e| !e.message.is_empty()), "{}", f.name);
            }
            other => panic!("{}: expected validation errors, got {other:?}", f.name),
        }
    }
}

#[test]
fn valid_fixtures_render_to_matching_sql() {
    let fixtures = dsl_fixtures("valid.jsonl");
    assert_eq!(fixtures.len(), 25);
    let reg = OperatorRegistry::default();
    for f in fixtures {
        let spec = parse_dsl_reply(&f.reply, &sales_columns(), &reg).unwrap_or_else(|e| panic!("{}: {e}", f.name));
        let sql = dsl_to_sql(&spec, &f.table, &reg).unwrap();
        let json: Value = serde_json::from_str(&f.reply).unwrap();
        assert_eq!(clauses(&sql), expected_clauses(&json, &f.table), "{}: {sql}", f.name);
    }
}

#[test]
fn unresolved_column_is_distinct_from_validation() {
    let reply = r#"{"MeasureList": [{"column": "gmv", "aggregation": "sum"}], "DimensionList": [], "ConditionList": []}"#;
    assert!(matches!(
        parse_dsl_reply(reply, &sales_columns(), &OperatorRegistry::default()),
        Err(DslError::UnresolvedColumn(c)) if c == "gmv"
    ));
}

#[test]
fn operator_registry_is_extensible() {
    let reply = r#"{"MeasureList": [{"column": "cost", "aggregation": "sum"}], "DimensionList": [], "ConditionList": [{"column": "region", "operator": "!=", "value": "north"}]}"#;
    let mut reg = OperatorRegistry::empty();
    assert!(parse_dsl_reply(reply, &sales_columns(), &reg).is_err());
    reg.register("!=", nbi_core::graph::OperatorKind::Compare("<>"));
    let spec = parse_dsl_reply(reply, &sales_columns(), &reg).unwrap();
    assert!(dsl_to_sql(&spec, "sales", &reg).unwrap().ends_with("WHERE region <> 'north'"));
}

#[test]
fn valid_fixtures_with_measures_chart_or_refuse() {
    let reg = OperatorRegistry::default();
    for f in dsl_fixtures("valid.jsonl") {
        let spec = parse_dsl_reply(&f.reply, &sales_columns(), &reg).unwrap();
        let chart = dsl_to_vis(&spec).unwrap();
        validate_chart_spec(&chart).unwrap_or_else(|e| panic!("{}: {e}", f.name));
    }
}

/// JSON Pointer form of a validator path: `$.A[0].b` -> `/A/0/b`.
fn pointer(path: &str) -> String {
    path.trim_start_matches('$').replace('[', ".").replace(']', "").replace('.', "/")
}

/// A general JSON Schema engine over the committed schema document agrees
/// with the hand-written validator on every fixture, and each schema
/// violation is covered by a field error at or below its location.
#[test]
fn schema_engine_agrees_with_validator() {
    let schema: Value = serde_json::from_str(DSL_SCHEMA).unwrap();
    let engine = jsonschema::validator_for(&schema).unwrap();
    let reg = OperatorRegistry::default();
    let mut compared = 0;
    for f in dsl_fixtures("valid.jsonl").into_iter().chain(dsl_fixtures("malformed.jsonl")) {
        let Ok(instance) = serde_json::from_str::<Value>(&f.reply) else { continue };
        let ours = nbi_core::graph::validate_dsl(&instance, &reg);
        assert_eq!(engine.is_valid(&instance), ours.is_ok(), "{}", f.name);
        if let Err(errs) = ours {
            let ptrs: Vec<String> = errs.iter().map(|e| pointer(&e.path)).collect();
            for e in engine.iter_errors(&instance) {
                let at = e.instance_path().to_string();
                assert!(ptrs.iter().any(|p| p.starts_with(&at)), "{}: schema error at `{at}` not covered by {ptrs:?}", f.name);
            }
        }
        compared += 1;
    }
    assert!(compared >= 48);
}
