mod common;

use std::sync::Arc;

use common::*;
use nbi_service::Service;
use serde_json::{json, Value};

fn start(store: &std::path::Path, fixtures: &std::path::Path) -> (Server, Client) {
    let service = Arc::new(Service::open(scripted_config(store, fixtures)).unwrap());
    let server = Server::start(service);
    let client = Client::new(&server.base);
    (server, client)
}

/// PUTs the scenario notebook and opens a session on it.
fn seed(client: &Client, dir: &std::path::Path) -> (String, String) {
    let nb = scenario_notebook(dir);
    let r = client.put("/notebooks/sales_review", &nb.to_string());
    assert_eq!(r.status, 200, "{}", r.body);
    let r = client.post("/sessions", &json!({"notebook_id": "sales_review"}).to_string());
    assert_eq!(r.status, 201, "{}", r.body);
    let sid = r.json()["session_id"].as_str().unwrap().to_string();
    (sid, client.get("/notebooks/sales_review").body)
}

fn ask(client: &Client, sid: &str, dir: &std::path::Path) -> Value {
    let (query, scope) = scenario_ask(dir);
    let r = client.post(&format!("/sessions/{sid}/ask"), &json!({"query": query, "scope": scope}).to_string());
    assert_eq!(r.status, 200, "{}", r.body);
    r.json()
}

#[test]
fn ask_accept_commits_cells_and_links_them_in_the_dag() {
    let store = tempfile::tempdir().unwrap();
    let dir = scenario("01_");
    let (server, client) = start(store.path(), &dir);
    let (sid, before) = seed(&client, &dir);
    let before: Value = serde_json::from_str(&before).unwrap();
    let rev0 = before["revision"].as_u64().unwrap();

    let suggestion = ask(&client, &sid, &dir);
    assert_eq!(suggestion["edits"].as_array().unwrap().len(), 2);

    let dag = client.get(&format!("/sessions/{sid}/dag")).json();
    assert_eq!(dag["pending"].as_array().unwrap().len(), 2);

    let r = client.post(&format!("/sessions/{sid}/resolve"), r#"{"decision":"accept"}"#);
    assert_eq!(r.status, 200, "{}", r.body);
    let out = r.json();
    assert_eq!(out["revision"].as_u64().unwrap(), rev0 + 2);
    let cells = out["notebook"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 5);
    let kinds: Vec<&str> = cells[3..].iter().map(|c| c["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["sql", "chart"]);
    let (sql_id, chart_id) = (cells[3]["id"].clone(), cells[4]["id"].clone());

    let dag = client.get(&format!("/sessions/{sid}/dag")).json();
    assert_eq!(dag["revision"].as_u64().unwrap(), rev0 + 2);
    assert!(dag["pending"].as_array().unwrap().is_empty());
    assert!(
        dag["edges"].as_array().unwrap().iter().any(|e| e["from"] == sql_id && e["to"] == chart_id),
        "no edge from the new query cell to the chart: {dag}"
    );

    let stored = client.get("/notebooks/sales_review").json();
    assert_eq!(stored["revision"].as_u64().unwrap(), rev0 + 2);
    assert_eq!(stored["cells"].as_array().unwrap().len(), 5);
    server.stop().unwrap();
}

#[test]
fn reject_leaves_the_notebook_byte_identical() {
    let store = tempfile::tempdir().unwrap();
    let dir = scenario("01_");
    let (_server, client) = start(store.path(), &dir);
    let (sid, before) = seed(&client, &dir);
    ask(&client, &sid, &dir);
    let r = client.post(&format!("/sessions/{sid}/resolve"), r#"{"decision":"reject"}"#);
    assert_eq!(r.status, 200, "{}", r.body);
    assert!(r.json()["changes"].as_array().unwrap().is_empty());
    assert_eq!(client.get("/notebooks/sales_review").body, before);
}

#[test]
fn pending_and_missing_suggestions_conflict() {
    let store = tempfile::tempdir().unwrap();
    let dir = scenario("01_");
    let (_server, client) = start(store.path(), &dir);
    let (sid, _) = seed(&client, &dir);

    let r = client.post(&format!("/sessions/{sid}/resolve"), r#"{"decision":"accept"}"#);
    assert_eq!(r.status, 409);
    assert_eq!(r.json()["error"], "NoPendingSuggestion");

    ask(&client, &sid, &dir);
    let (query, scope) = scenario_ask(&dir);
    let r = client.post(&format!("/sessions/{sid}/ask"), &json!({"query": query, "scope": scope}).to_string());
    assert_eq!(r.status, 409);
    assert_eq!(r.json()["error"], "PendingSuggestion");
}

#[test]
fn request_errors_are_json_with_a_kind() {
    let store = tempfile::tempdir().unwrap();
    let dir = scenario("01_");
    let (_server, client) = start(store.path(), &dir);

    let r = client.get("/notebooks/nope");
    assert_eq!(r.status, 404);
    assert!(r.json()["message"].as_str().unwrap().contains("nope"));

    let r = client.post("/sessions/s99/ask", r#"{"query":"x","scope":{"level":"notebook","task_type":"other"}}"#);
    assert_eq!(r.status, 404);

    let r = client.post("/sessions", r#"{"notebook":"sales_review"}"#);
    assert_eq!(r.status, 400);
    assert!(r.json()["message"].as_str().unwrap().contains("notebook"));

    let r = client.put("/notebooks/sales_review", "{not json");
    assert_eq!(r.status, 400);

    let nb = scenario_notebook(&dir);
    let r = client.put("/notebooks/other", &nb.to_string());
    assert_eq!(r.status, 400);

    assert_eq!(client.put("/notebooks/sales_review", &nb.to_string()).status, 200);
    let r = client.put("/notebooks/sales_review?expected_revision=7", &nb.to_string());
    assert_eq!(r.status, 409, "{}", r.body);

    let r = client.get("/kg/query?q=revenue&task=bogus");
    assert_eq!(r.status, 400);
}

#[test]
fn put_applies_only_the_difference() {
    let store = tempfile::tempdir().unwrap();
    let dir = scenario("01_");
    let (_server, client) = start(store.path(), &dir);
    let mut nb = scenario_notebook(&dir);
    let r = client.put("/notebooks/sales_review", &nb.to_string()).json();
    assert_eq!(r["changes"], 3);
    let rev = r["revision"].as_u64().unwrap();

    nb["cells"][2]["source"] = json!("# Revenue review 2025");
    let r = client.put(&format!("/notebooks/sales_review?expected_revision={rev}"), &nb.to_string()).json();
    assert_eq!(r["changes"], 1);
    assert_eq!(r["revision"].as_u64().unwrap(), rev + 1);

    let r = client.put("/notebooks/sales_review", &nb.to_string()).json();
    assert_eq!(r["changes"], 0);
    assert_eq!(r["revision"].as_u64().unwrap(), rev + 1);
}

#[test]
fn restart_reloads_committed_state() {
    let store = tempfile::tempdir().unwrap();
    let dir = scenario("01_");
    let accepted = {
        let (server, client) = start(store.path(), &dir);
        let (sid, _) = seed(&client, &dir);
        ask(&client, &sid, &dir);
        client.post(&format!("/sessions/{sid}/resolve"), r#"{"decision":"accept"}"#);
        let body = client.get("/notebooks/sales_review").body;
        server.stop().unwrap();
        body
    };
    let (_server, client) = start(store.path(), &dir);
    assert_eq!(client.get("/notebooks/sales_review").body, accepted);
}

#[test]
fn crash_without_flush_recovers_from_the_event_log() {
    let store = tempfile::tempdir().unwrap();
    let dir = scenario("01_");
    let cfg = || {
        let mut c = scripted_config(store.path(), &dir);
        c.store.snapshot_every = 1000;
        c
    };
    let expected = {
        let service = Service::open(cfg()).unwrap();
        let nb = nbi_core::notebook::parse_notebook(scenario_notebook(&dir).to_string().as_bytes()).unwrap();
        service.put_notebook("sales_review", &nb, None).unwrap();
        let sid = service.create_session("sales_review").unwrap().session_id;
        let (query, scope) = scenario_ask(&dir);
        service.ask(&sid, &query, &serde_json::from_value(scope).unwrap()).unwrap();
        service.resolve(&sid, nbi_core::Decision::Accept).unwrap();
        let nb = service.get_notebook("sales_review").unwrap();
        std::mem::forget(service);
        nb
    };
    let snap = std::fs::read(store.path().join("notebooks/sales_review/snapshot.json")).unwrap();
    assert!(nbi_core::notebook::parse_notebook(&snap).unwrap().revision < expected.revision);
    let service = Service::open(cfg()).unwrap();
    assert_eq!(service.get_notebook("sales_review").unwrap(), expected);
}

#[test]
fn bearer_token_guards_everything_but_health() {
    let store = tempfile::tempdir().unwrap();
    let dir = scenario("01_");
    let service = Service::open(scripted_config(store.path(), &dir)).unwrap().with_token(Some("sesame".into()));
    let server = Server::start(Arc::new(service));
    let anon = Client::new(&server.base);
    assert_eq!(anon.get("/health").status, 200);
    let r = anon.get("/metrics");
    assert_eq!(r.status, 401);
    assert_eq!(r.json()["error"], "Unauthorized");
    assert_eq!(Client::new(&server.base).with_token("wrong").get("/metrics").status, 401);
    assert_eq!(Client::new(&server.base).with_token("sesame").get("/metrics").status, 200);
}

#[test]
fn health_and_metrics_report_state() {
    let store = tempfile::tempdir().unwrap();
    let dir = scenario("01_");
    let (_server, client) = start(store.path(), &dir);
    let (sid, _) = seed(&client, &dir);
    let h = client.get("/health").json();
    assert_eq!(h["status"], "ok");
    assert_eq!(h["sessions"], 1);
    assert!(h["graph"]["nodes"].as_u64().unwrap() > 0);
    assert_eq!(h["notebooks"]["sales_review"], 3);

    let m = client.get("/metrics").json();
    assert_eq!(m["total"]["calls"], 0);
    ask(&client, &sid, &dir);
    let m = client.get("/metrics").json();
    assert!(m["total"]["calls"].as_u64().unwrap() > 0);
    assert!(m["tags"]["agent.plan"]["calls"].as_u64().unwrap() >= 1);
}

#[test]
fn kg_query_renders_dsl_sql_and_chart() {
    let store = tempfile::tempdir().unwrap();
    let fixtures = tempfile::tempdir().unwrap();
    write_kg_fixtures(fixtures.path());
    let (_server, client) = start(store.path(), fixtures.path());
    let r = client.get("/kg/query?q=revenue%20by%20product&task=nl2dsl");
    assert_eq!(r.status, 200, "{}", r.body);
    let a = r.json();
    assert_eq!(a["table"], "sales");
    assert!(!a["topk"].as_array().unwrap().is_empty());
    let sql = a["sql"].as_str().unwrap();
    assert!(sql.contains("prod_class4_name") && sql.contains("shouldincome_after"), "{sql}");
    assert!(a["chart"].is_object());
}

#[test]
fn kg_generate_grows_the_graph_and_persists_it() {
    let store = tempfile::tempdir().unwrap();
    let fixtures = tempfile::tempdir().unwrap();
    write_kg_fixtures(fixtures.path());
    let nodes_before;
    {
        let (server, client) = start(store.path(), fixtures.path());
        nodes_before = client.get("/health").json()["graph"]["nodes"].as_u64().unwrap();
        let r = client.post("/kg/generate", &generate_request().to_string());
        assert_eq!(r.status, 200, "{}", r.body);
        let out = r.json();
        assert_eq!(out["graph_revision"], 1);
        assert!(out["graph_nodes"].as_u64().unwrap() > nodes_before);
        assert_eq!(out["report"]["bundle"]["table"]["name"], "orders");

        let r = client.post("/kg/generate", r#"{"schema":{},"scripts":[],"extra":1}"#);
        assert_eq!(r.status, 400);
        server.stop().unwrap();
    }
    assert!(store.path().join("graph/nodes.jsonl").exists());
    let (_server, client) = start(store.path(), fixtures.path());
    assert!(client.get("/health").json()["graph"]["nodes"].as_u64().unwrap() > nodes_before);
}

#[test]
fn cors_headers_follow_configuration() {
    let store = tempfile::tempdir().unwrap();
    let dir = scenario("01_");
    let mut cfg = scripted_config(store.path(), &dir);
    cfg.server.allow_origins = vec!["http://localhost:5173".into()];
    let server = Server::start(Arc::new(Service::open(cfg).unwrap()));
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let r = agent.get(format!("{}/health", server.base)).header("origin", "http://localhost:5173").call().unwrap();
    assert_eq!(r.headers().get("access-control-allow-origin").unwrap(), "http://localhost:5173");


    let other = tempfile::tempdir().unwrap();
    let (plain, _) = start(other.path(), &dir);
    let r = agent.get(format!("{}/health", plain.base)).header("origin", "http://localhost:5173").call().unwrap();
    assert!(r.headers().get("access-control-allow-origin").is_none());
}

#[test]
fn edit_commits_the_user_cells() {
    let store = tempfile::tempdir().unwrap();
    let dir = scenario("01_");
    let (_server, client) = start(store.path(), &dir);
    let (sid, _) = seed(&client, &dir);
    ask(&client, &sid, &dir);
    let body = json!({
        "decision": "edit",
        "cells": [{"id": "u1", "kind": "sql", "source": "SELECT region FROM sales", "binding": "regions"}]
    });
    let r = client.post(&format!("/sessions/{sid}/resolve"), &body.to_string());
    assert_eq!(r.status, 200, "{}", r.body);
    let cells = r.json()["notebook"]["cells"].as_array().unwrap().clone();
    assert_eq!(cells.len(), 4);
    assert_eq!(cells[3]["source"], "SELECT region FROM sales");
    let dag = client.get(&format!("/sessions/{sid}/dag")).json();
    assert!(dag["var_defs"]["regions"].is_array());
}
