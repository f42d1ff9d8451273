#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use nbi_service::config::{Config, ProviderKind};
use nbi_service::{Service, ServiceError};
use serde_json::{json, Value};
use tokio::sync::oneshot;

pub fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub fn world_dir() -> PathBuf {
    core_fixtures().join("world")
}

pub fn scenario(prefix: &str) -> PathBuf {
    let root = core_fixtures().join("scenarios");
    std::fs::read_dir(&root)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .unwrap_or_else(|| panic!("no scenario {prefix}"))
}

/// The notebook a scenario starts from, as request-body JSON.
pub fn scenario_notebook(dir: &Path) -> Value {
    let s: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("scenario.json")).unwrap()).unwrap();
    s["notebook"].clone()
}

/// The first `ask` step of a scenario: (query, scope).
pub fn scenario_ask(dir: &Path) -> (String, Value) {
    let s: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("scenario.json")).unwrap()).unwrap();
    let step = s["steps"].as_array().unwrap().iter().find(|st| st["op"] == "ask").unwrap().clone();
    (step["query"].as_str().unwrap().to_string(), step["scope"].clone())
}

pub fn scripted_config(store: &Path, fixtures: &Path) -> Config {
    let mut cfg = Config::default().with_fixtures(fixtures.to_path_buf());
    cfg.gateway.provider = ProviderKind::Scripted;
    cfg.store.dir = store.to_path_buf();
    cfg.world = Some(world_dir());
    cfg
}

pub const DSL_REPLY: &str = r#"{"ConditionList":[],"DimensionList":[{"column":"prod_class4_name","type":"categorical"}],"MeasureList":[{"aggregation":"sum","column":"shouldincome_after"}]}"#;

pub fn draft_bundle(col: &str) -> String {
    json!({
        "database": {"description": "bi warehouse", "usage": "reporting"},
        "table": {"description": "income facts", "usage": "revenue analysis", "organization": "one row per order"},
        "columns": {col: {"description": "order region", "usage": "grouping"}}
    })
    .to_string()
}

/// Tag-keyed fixtures for knowledge-graph queries and knowledge generation.
pub fn write_kg_fixtures(dir: &Path) {
    let scores = json!({
        "col:bi.sales.prod_class4_name": 5,
        "col:bi.sales.shouldincome_after": 5,
        "tb:bi.sales": 4,
        "db:bi": 2,
    })
    .to_string();
    let entries = [
        ("graph.rewrite", "revenue by product".to_string()),
        ("graph.llm_eval", scores),
        ("graph.translate_dsl", DSL_REPLY.to_string()),
        ("knowledge.map", draft_bundle("region")),
        ("knowledge.calibrate", "score: 5".to_string()),
        ("knowledge.reduce", draft_bundle("region")),
    ];
    let text: String =
        entries.iter().map(|(tag, response)| json!({"tag": tag, "response": response}).to_string() + "\n").collect();
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("kg.jsonl"), text).unwrap();
}

pub fn generate_request() -> Value {
    json!({
        "schema": {"database": "bi", "table": "orders", "columns": [{"name": "region", "declared_type": "string"}]},
        "scripts": [
            {"id": "a", "language": "sql", "text": "SELECT region, COUNT(*) FROM orders GROUP BY region", "last_run": "2026-01-02T00:00:00Z"},
            {"id": "b", "language": "sql", "text": "SELECT * FROM orders WHERE region = 'north'", "last_run": "2026-01-01T00:00:00Z"}
        ]
    })
}

/// An HTTP service on an ephemeral port, stopped through a oneshot.
pub struct Server {
    pub base: String,
    stop: Option<oneshot::Sender<()>>,
    handle: Option<JoinHandle<Result<(), ServiceError>>>,
}

impl Server {
    pub fn start(service: Arc<Service>) -> Self {
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel::<SocketAddr>();
        let handle = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                nbi_service::http::serve(service, listener, async {
                    let _ = stop_rx.await;
                })
                .await
            })
        });
        let addr = addr_rx.recv().unwrap();
        Server { base: format!("http://{addr}"), stop: Some(stop_tx), handle: Some(handle) }
    }

    pub fn stop(mut self) -> Result<(), ServiceError> {
        let _ = self.stop.take().unwrap().send(());
        self.handle.take().unwrap().join().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub struct Client {
    agent: ureq::Agent,
    base: String,
    token: Option<String>,
}

pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.body))
    }
}

impl Client {
    pub fn new(base: &str) -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        Client { agent: ureq::Agent::new_with_config(config), base: base.to_string(), token: None }
    }

    pub fn with_token(mut self, token: &str) -> Self {
        self.token = Some(token.to_string());
        self
    }

    fn finish(&self, r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
        let mut r = r.expect("transport error");
        Reply { status: r.status().as_u16(), body: r.body_mut().read_to_string().unwrap() }
    }

    pub fn get(&self, path: &str) -> Reply {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        self.finish(req.call())
    }

    pub fn post(&self, path: &str, body: &str) -> Reply {
        let mut req = self.agent.post(format!("{}{path}", self.base)).header("content-type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        self.finish(req.send(body))
    }

    pub fn put(&self, path: &str, body: &str) -> Reply {
        let mut req = self.agent.put(format!("{}{path}", self.base)).header("content-type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        self.finish(req.send(body))
    }
}
