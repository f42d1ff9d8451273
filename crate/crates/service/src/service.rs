//! Service state and operations, independent of the HTTP layer.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use nbi_core::agent::SharedBuffer;
use nbi_core::clock::{Clock, StepClock, SystemClock};
use nbi_core::context::ContextError;
use nbi_core::dag::DagView;
use nbi_core::gateway::{Gateway, GatewayError, Provider, ScriptedProvider, TagUsage};
use nbi_core::graph::{
    build_indexes, coarse_retrieve, dsl_to_sql, dsl_to_vis, fine_order, translate_to_dsl, DslError, DslSpec, GraphError, Indexes,
    KnowledgeGraph, KnowledgeSource, OperatorRegistry, RetrievalConfig, ScoredNode, TaskProfile,
};
use nbi_core::knowledge::{generate_knowledge, GenConfig, GenerationReport, KnowledgeError, LineageInfo, SchemaInfo, Script, ScriptHistory};
use nbi_core::notebook::CellChange;
use nbi_core::replay::{ReplayError, World};
use nbi_core::{Cell, CellDag, Decision, Engine, Notebook, QueryScope, Session, SessionError, Suggestion};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{Config, ConfigError, GatewayConfig, ProviderKind};
use crate::provider::LiveProvider;
use crate::store::{GraphStore, NotebookStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Session(#[from] SessionError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::NotFound(_) | ServiceError::Store(StoreError::NotFound(_)) => 404,
            ServiceError::BadRequest(_) | ServiceError::Store(StoreError::InvalidId(_)) => 400,
            ServiceError::Store(StoreError::Conflict { .. })
            | ServiceError::Session(SessionError::PendingSuggestion | SessionError::NoPendingSuggestion) => 409,
            ServiceError::Store(StoreError::Notebook(_)) => 422,
            ServiceError::Store(_)
            | ServiceError::Config(_)
            | ServiceError::Replay(_)
            | ServiceError::Bind { .. }
            | ServiceError::Internal(_) => 500,
            ServiceError::Gateway(_) => 502,
            _ => 422,
        }
    }

    /// Short machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) | ServiceError::Store(StoreError::NotFound(_)) => "NotFound",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Config(_) => "ConfigError",
            ServiceError::Store(StoreError::Conflict { .. }) => "Conflict",
            ServiceError::Store(StoreError::InvalidId(_)) => "InvalidId",
            ServiceError::Store(StoreError::Notebook(_)) => "NotebookError",
            ServiceError::Store(_) => "StoreError",
            ServiceError::Session(SessionError::PendingSuggestion) => "PendingSuggestion",
            ServiceError::Session(SessionError::NoPendingSuggestion) => "NoPendingSuggestion",
            ServiceError::Session(_) => "PipelineError",
            ServiceError::Context(_) => "ContextError",
            ServiceError::Knowledge(_) => "KnowledgeError",
            ServiceError::Dsl(_) => "DslError",
            ServiceError::Graph(_) => "GraphError",
            ServiceError::Gateway(_) => "GatewayError",
            ServiceError::Replay(_) => "ReplayError",
            ServiceError::Bind { .. } => "BindError",
            ServiceError::Internal(_) => "Internal",
        }
    }

    /// Pipeline stage for ask/resolve failures.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            ServiceError::Session(e) => Some(e.stage()),
            ServiceError::Context(_) => Some("context"),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = serde_json::json!({"error": self.kind(), "message": self.to_string()});
        if let Some(stage) = self.stage() {
            v["stage"] = stage.into();
        }
        v
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Gateway and clock for a gateway configuration. The scripted provider
/// runs on a step clock so fixture runs are reproducible.
pub fn build_gateway(cfg: &GatewayConfig, embeddings: &str) -> Result<(Gateway, Arc<dyn Clock>), ServiceError> {
    let (provider, clock): (Arc<dyn Provider>, Arc<dyn Clock>) = match cfg.provider {
        ProviderKind::Scripted => {
            let dir = cfg.fixtures.as_ref().ok_or_else(|| ServiceError::BadRequest("no fixture directory".into()))?;
            let mut p = if dir.is_dir() { ScriptedProvider::load_dir(dir)? } else { ScriptedProvider::new() };
            p.load_embeddings(embeddings)?;
            (Arc::new(p), Arc::new(StepClock::fixed()))
        }
        ProviderKind::Live => (Arc::new(LiveProvider::from_env(cfg)?), Arc::new(SystemClock)),
    };
    Ok((Gateway::new(provider).with_temperatures(cfg.temperatures.clone()), clock))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgAnswer {
    pub task: String,
    pub topk: Vec<ScoredNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_error: Option<String>,
    pub table: Option<String>,
    pub dsl: DslSpec,
    pub sql: String,
    /// Absent when the DSL has no measure to plot.
    pub chart: Option<Value>,
}

/// Ranks graph knowledge for `q`, translates it to a DSL specification and
/// renders SQL and a chart template from it.
pub fn kg_query(
    q: &str,
    task: &str,
    graph: &KnowledgeGraph,
    indexes: &Indexes,
    cfg: &RetrievalConfig,
    operators: &OperatorRegistry,
    gateway: &Gateway,
) -> Result<KgAnswer, ServiceError> {
    let candidates = coarse_retrieve(q, graph, indexes, cfg, gateway)?;
    let order = fine_order(q, &candidates, graph, indexes, cfg, gateway)?;
    let knowledge = KnowledgeSource::from_nodes(graph, &order.ranked);
    let dsl = translate_to_dsl(q, &knowledge, operators, gateway)?;
    let table = knowledge.table.clone();
    let from = table.as_deref().ok_or_else(|| ServiceError::BadRequest("the retrieved knowledge names no table".into()))?;
    let sql = dsl_to_sql(&dsl, from, operators)?;
    let chart = match dsl_to_vis(&dsl) {
        Ok(c) => Some(c),
        Err(DslError::UnchartableSpec) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(KgAnswer { task: task.to_string(), topk: order.ranked, llm_error: order.llm_error, table, dsl, sql, chart })
}

pub fn task_profile(task: &str) -> Result<TaskProfile, ServiceError> {
    TaskProfile::preset(task).ok_or_else(|| ServiceError::BadRequest(format!("unknown task profile `{task}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub schema: SchemaInfo,
    pub scripts: Vec<Script>,
    #[serde(default)]
    pub lineage: LineageInfo,
    #[serde(default)]
    pub config: Option<GenConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub report: GenerationReport,
    pub graph_nodes: usize,
    pub graph_revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub notebook_id: String,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveResponse {
    pub revision: u64,
    pub changes: Vec<CellChange>,
    pub notebook: Notebook,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDag {
    pub revision: u64,
    #[serde(flatten)]
    pub dag: DagView,
    /// Cells of the pending suggestion, if any.
    pub pending: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tags: BTreeMap<String, TagUsage>,
    pub total: TagUsage,
}

struct SessionSlot {
    notebook_id: String,
    session: Session,
}

impl SessionSlot {
    /// Rebases the session on the stored notebook if it moved underneath.
    fn sync(&mut self, stored: &Notebook) {
        if self.session.notebook.revision != stored.revision {
            self.session.notebook = stored.clone();
            self.session.dag = CellDag::build(stored);
        }
    }
}

pub struct Service {
    pub config: Config,
    engine: RwLock<Engine>,
    task_indexes: Mutex<BTreeMap<String, Arc<Indexes>>>,
    notebooks: NotebookStore,
    graphs: GraphStore,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<SessionSlot>>>>,
    next_session: AtomicU64,
    graph_revision: AtomicU64,
    token: Option<String>,
}

impl Service {
    /// Opens the stores and builds the engine. The graph comes from the
    /// store when one was saved, else from the configured world.
    pub fn open(config: Config) -> Result<Self, ServiceError> {
        config.validate()?;
        let world = match &config.world {
            Some(dir) => World::load(dir)?,
            None => World::default(),
        };
        let (gateway, clock) = build_gateway(&config.gateway, &world.embeddings)?;
        let mut engine = Engine::new(gateway, world.tables.clone(), clock)?;
        engine.retrieval = config.retrieval;
        engine.context = config.context;
        engine.dispatch = config.dispatch;
        let graphs = GraphStore::open(&config.store.dir)?;
        let graph = match graphs.load()? {
            Some(g) => g,
            None => world.graph,
        };
        engine.set_graph(graph)?;
        let notebooks = NotebookStore::open(&config.store.dir, config.store.snapshot_every)?;
        let token = std::env::var(&config.server.token_env).ok().filter(|t| !t.is_empty());
        Ok(Service {
            config,
            engine: RwLock::new(engine),
            task_indexes: Mutex::new(BTreeMap::new()),
            notebooks,
            graphs,
            sessions: Mutex::new(BTreeMap::new()),
            next_session: AtomicU64::new(1),
            graph_revision: AtomicU64::new(0),
            token,
        })
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    fn engine(&self) -> std::sync::RwLockReadGuard<'_, Engine> {
        self.engine.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn health(&self) -> Value {
        serde_json::json!({
            "status": "ok",
            "notebooks": self.notebooks.revisions(),
            "graph": {"revision": self.graph_revision.load(Ordering::SeqCst), "nodes": self.engine().graph.len()},
            "sessions": lock(&self.sessions).len(),
        })
    }

    pub fn get_notebook(&self, id: &str) -> Result<Notebook, ServiceError> {
        Ok(self.notebooks.get(id)?)
    }

    pub fn put_notebook(&self, id: &str, nb: &Notebook, expected: Option<u64>) -> Result<(Notebook, Vec<CellChange>), ServiceError> {
        if nb.id != id {
            return Err(ServiceError::BadRequest(format!("body id `{}` does not match path id `{id}`", nb.id)));
        }
        Ok(self.notebooks.put(id, nb, expected)?)
    }

    pub fn create_session(&self, notebook_id: &str) -> Result<SessionInfo, ServiceError> {
        let nb = self.notebooks.get(notebook_id)?;
        let id = format!("s{}", self.next_session.fetch_add(1, Ordering::SeqCst));
        let revision = nb.revision;
        let session = Session::new(id.clone(), nb).with_buffer(SharedBuffer::new(self.config.buffer));
        lock(&self.sessions).insert(id.clone(), Arc::new(Mutex::new(SessionSlot { notebook_id: notebook_id.into(), session })));
        Ok(SessionInfo { session_id: id, notebook_id: notebook_id.into(), revision })
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<SessionSlot>>, ServiceError> {
        lock(&self.sessions).get(id).cloned().ok_or_else(|| ServiceError::NotFound(format!("session `{id}` not found")))
    }

    pub fn ask(&self, session_id: &str, query: &str, scope: &QueryScope) -> Result<Suggestion, ServiceError> {
        let slot = self.slot(session_id)?;
        let mut slot = lock(&slot);
        if slot.session.pending().is_none() {
            let stored = self.notebooks.get(&slot.notebook_id)?;
            slot.sync(&stored);
        }
        let engine = self.engine();
        Ok(slot.session.ask(&engine, query, scope)?.clone())
    }

    /// Resolves the pending suggestion and commits the resulting changes to
    /// the notebook store under its writer lock.
    pub fn resolve(&self, session_id: &str, decision: Decision) -> Result<ResolveResponse, ServiceError> {
        let slot = self.slot(session_id)?;
        let mut slot = lock(&slot);
        let nb_id = slot.notebook_id.clone();
        self.notebooks.with_writer(&nb_id, false, |w| {
            slot.sync(w.notebook());
            let before = slot.session.audit.len();
            slot.session.resolve(decision)?;
            let changes = slot.session.audit[before..].to_vec();
            w.commit_changes(&changes)?;
            Ok(ResolveResponse { revision: w.notebook().revision, changes, notebook: w.notebook().clone() })
        })
    }

    pub fn session_dag(&self, session_id: &str) -> Result<SessionDag, ServiceError> {
        let slot = self.slot(session_id)?;
        let mut slot = lock(&slot);
        let stored = self.notebooks.get(&slot.notebook_id)?;
        if slot.session.pending().is_none() {
            slot.sync(&stored);
        }
        let pending = slot.session.pending().map(|s| s.cells().into_iter().cloned().collect()).unwrap_or_default();
        Ok(SessionDag { revision: slot.session.notebook.revision, dag: slot.session.dag.view(), pending })
    }

    fn indexes_for(&self, engine: &Engine, task: &str) -> Result<Arc<Indexes>, ServiceError> {
        if let Some(idx) = lock(&self.task_indexes).get(task) {
            return Ok(idx.clone());
        }
        let idx = Arc::new(build_indexes(&engine.graph, &task_profile(task)?, &engine.gateway)?);
        lock(&self.task_indexes).insert(task.to_string(), idx.clone());
        Ok(idx)
    }

    pub fn kg_query(&self, q: &str, task: &str) -> Result<KgAnswer, ServiceError> {
        let engine = self.engine();
        let idx = self.indexes_for(&engine, task)?;
        kg_query(q, task, &engine.graph, &idx, &engine.retrieval, &engine.operators, &engine.gateway)
    }

    /// Generates knowledge for one table and merges it into the graph.
    /// Graph writes are serialized by the engine lock; readers see the old
    /// graph and indexes until the swap.
    pub fn kg_generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, ServiceError> {
        let cfg = req.config.unwrap_or(self.config.generation);
        let history = ScriptHistory { scripts: req.scripts.clone(), table_ref: req.schema.table.clone() };
        let report = generate_knowledge(&history, &req.schema, &req.lineage, &cfg, &self.engine().gateway)?;
        let mut engine = self.engine.write().unwrap_or_else(|e| e.into_inner());
        let mut graph = engine.graph.clone();
        graph.upsert_bundle(&report.bundle)?;
        self.graphs.save(&graph)?;
        engine.set_graph(graph)?;
        lock(&self.task_indexes).clear();
        let graph_revision = self.graph_revision.fetch_add(1, Ordering::SeqCst) + 1;
        Ok(GenerateResponse { graph_nodes: engine.graph.len(), report, graph_revision })
    }

    pub fn metrics(&self) -> Metrics {
        let engine = self.engine();
        Metrics { tags: engine.gateway.token_report(), total: engine.gateway.total_usage() }
    }

    /// Snapshots every notebook and saves the graph.
    pub fn flush(&self) -> Result<(), ServiceError> {
        self.notebooks.flush()?;
        self.graphs.save(&self.engine().graph)?;
        Ok(())
    }
}
