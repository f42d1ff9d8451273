//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nbi_core::agent::SharedBuffer;
use nbi_core::context::{retrieve_context, ContextConfig};
use nbi_core::graph::{build_indexes, KnowledgeGraph, OperatorRegistry};
use nbi_core::knowledge::{generate_knowledge, LineageEdge, LineageInfo, SchemaInfo, Script, ScriptHistory};
use nbi_core::notebook::{parse_notebook, serialize_notebook};
use nbi_core::replay::{replay, World};
use nbi_core::{CellDag, Decision, Engine, QueryScope, ScopeLevel, Session, TaskType};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::Config;
use crate::service::{build_gateway, kg_query, task_profile, Service, ServiceError};

#[derive(Debug, Parser)]
#[command(name = "nbi", version, about = "Notebook BI engine: service and tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct GatewayArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replay recorded completions from this directory instead of calling a
    /// live provider.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
}

impl GatewayArgs {
    fn config(&self) -> Result<Config, ServiceError> {
        let cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        Ok(match &self.fixtures {
            Some(dir) => cfg.with_fixtures(dir.clone()),
            None => cfg,
        })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Level {
    Cell,
    Notebook,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Task {
    Nl2sql,
    Nl2dscode,
    Nl2vis,
    Nl2insight,
    Other,
}

impl From<Task> for TaskType {
    fn from(t: Task) -> Self {
        match t {
            Task::Nl2sql => TaskType::Nl2Sql,
            Task::Nl2dscode => TaskType::Nl2DsCode,
            Task::Nl2vis => TaskType::Nl2Vis,
            Task::Nl2insight => TaskType::Nl2Insight,
            Task::Other => TaskType::Other,
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct ScopeArgs {
    #[arg(long, value_enum, default_value = "notebook")]
    pub level: Level,
    /// Anchor cell for cell-level scope.
    #[arg(long)]
    pub anchor: Option<String>,
    /// Data variable for notebook-level scope; predicted when absent.
    #[arg(long = "var")]
    pub var: Option<String>,
    #[arg(long, value_enum, default_value = "other")]
    pub task: Task,
}

impl ScopeArgs {
    fn scope(&self) -> QueryScope {
        QueryScope {
            level: match self.level {
                Level::Cell => ScopeLevel::Cell,
                Level::Notebook => ScopeLevel::Notebook,
            },
            anchor_cell: self.anchor.clone(),
            data_variable: self.var.clone(),
            task_type: self.task.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DecisionArg {
    Accept,
    Reject,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        gateway: GatewayArgs,
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
        /// Overrides `store.dir`.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Overrides `world`.
        #[arg(long)]
        world: Option<PathBuf>,
    },
    /// Ask a question about a notebook file and print the suggestion.
    Ask {
        #[arg(long)]
        notebook: PathBuf,
        #[arg(long)]
        query: String,
        #[command(flatten)]
        scope: ScopeArgs,
        /// World directory with tables and knowledge.
        #[arg(long)]
        world: Option<PathBuf>,
        #[command(flatten)]
        gateway: GatewayArgs,
        /// Resolve the suggestion and write the notebook to `--out`.
        #[arg(long, value_enum, requires = "out")]
        decision: Option<DecisionArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Knowledge graph tools.
    Kg {
        #[command(subcommand)]
        command: KgCommand,
    },
    /// Cell dependency DAG tools.
    Dag {
        #[command(subcommand)]
        command: DagCommand,
    },
    /// Context retrieval tools.
    Context {
        #[command(subcommand)]
        command: ContextCommand,
    },
    /// Replay a recorded scenario directory and print the run.
    Replay { scenario: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum KgCommand {
    /// Generate knowledge for one table from its script history.
    Generate {
        /// Table schema JSON: {database, table, columns: [{name, declared_type}]}.
        #[arg(long)]
        schema: PathBuf,
        /// Script history JSONL: {id, language, text, last_run}.
        #[arg(long)]
        scripts: PathBuf,
        /// Lineage JSONL: {upstream, downstream}.
        #[arg(long)]
        lineage: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
    /// Retrieve knowledge for a question and render DSL, SQL and a chart.
    Query {
        /// Directory with nodes.jsonl and edges.jsonl, or a world directory.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "nl2dsl")]
        task: String,
        #[arg(long)]
        q: String,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum DagCommand {
    /// Print {nodes, edges, var_defs, diagnostics} for a notebook file.
    Build { notebook: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum ContextCommand {
    /// Print the context bundle for a query.
    Get {
        #[arg(long)]
        notebook: PathBuf,
        #[arg(long)]
        query: String,
        #[command(flatten)]
        scope: ScopeArgs,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
}

fn read(path: &Path) -> Result<String, ServiceError> {
    std::fs::read_to_string(path).map_err(|e| ServiceError::BadRequest(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ServiceError> {
    serde_json::from_str(&read(path)?).map_err(|e| ServiceError::BadRequest(format!("{}: {e}", path.display())))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ServiceError> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ServiceError::BadRequest(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

fn read_notebook(path: &Path) -> Result<nbi_core::Notebook, ServiceError> {
    let bytes = std::fs::read(path).map_err(|e| ServiceError::BadRequest(format!("{}: {e}", path.display())))?;
    parse_notebook(&bytes).map_err(|e| ServiceError::BadRequest(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    std::fs::write(path, bytes).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))
}

fn print<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), ServiceError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ServiceError::Internal(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| ServiceError::Internal(e.to_string()))
}

/// Graph from `nodes.jsonl`/`edges.jsonl` in `dir`, else from the world
/// files there; returns the directory's embedding fixtures alongside.
fn load_graph(dir: &Path) -> Result<(KnowledgeGraph, String), ServiceError> {
    let world = World::load(dir)?;
    if dir.join("nodes.jsonl").exists() {
        let edges = if dir.join("edges.jsonl").exists() { read(&dir.join("edges.jsonl"))? } else { String::new() };
        return Ok((KnowledgeGraph::import_jsonl(&read(&dir.join("nodes.jsonl"))?, &edges)?, world.embeddings));
    }
    Ok((world.graph, world.embeddings))
}

/// Runs a command other than `serve`, writing JSON to `out`.
pub fn run(command: Command, out: &mut dyn Write) -> Result<(), ServiceError> {
    match command {
        Command::Serve { .. } => Err(ServiceError::Internal("serve runs through `serve_blocking`".into())),
        Command::Ask { notebook, query, scope, world, gateway, decision, out: out_path } => {
            let cfg = gateway.config()?;
            let world = match world.or(cfg.world.clone()) {
                Some(dir) => World::load(&dir)?,
                None => World::default(),
            };
            let (gw, clock) = build_gateway(&cfg.gateway, &world.embeddings)?;
            let mut engine = Engine::new(gw, world.tables.clone(), clock)?;
            engine.retrieval = cfg.retrieval;
            engine.context = cfg.context;
            engine.dispatch = cfg.dispatch;
            engine.set_graph(world.graph.clone())?;
            let nb = read_notebook(&notebook)?;
            let mut session = Session::new("cli", nb).with_buffer(SharedBuffer::new(cfg.buffer));
            let suggestion = session.ask(&engine, &query, &scope.scope())?.clone();
            print(out, &suggestion)?;
            if let (Some(d), Some(path)) = (decision, out_path) {
                session.resolve(match d {
                    DecisionArg::Accept => Decision::Accept,
                    DecisionArg::Reject => Decision::Reject,
                })?;
                write(&path, &serialize_notebook(&session.notebook))?;
            }
            Ok(())
        }
        Command::Kg { command: KgCommand::Generate { schema, scripts, lineage, out: out_path, gateway } } => {
            let cfg = gateway.config()?;
            let (gw, _) = build_gateway(&cfg.gateway, "")?;
            let schema: SchemaInfo = read_json(&schema)?;
            let scripts: Vec<Script> = read_jsonl(&scripts)?;
            let lineage = match lineage {
                Some(p) => LineageInfo { edges: read_jsonl::<LineageEdge>(&p)? },
                None => LineageInfo::default(),
            };
            let history = ScriptHistory { scripts, table_ref: schema.table.clone() };
            let report = generate_knowledge(&history, &schema, &lineage, &cfg.generation, &gw)?;
            write(&out_path, report.bundle.to_json().as_bytes())?;
            print(
                out,
                &serde_json::json!({
                    "out": out_path,
                    "drafts": report.drafts.len(),
                    "below_threshold": report.below_threshold,
                    "failed": report.failed,
                    "columns": report.bundle.columns.len(),
                }),
            )
        }
        Command::Kg { command: KgCommand::Query { graph, task, q, gateway } } => {
            let cfg = gateway.config()?;
            let (g, embeddings) = load_graph(&graph)?;
            let (gw, _) = build_gateway(&cfg.gateway, &embeddings)?;
            let idx = build_indexes(&g, &task_profile(&task)?, &gw)?;
            print(out, &kg_query(&q, &task, &g, &idx, &cfg.retrieval, &OperatorRegistry::default(), &gw)?)
        }
        Command::Dag { command: DagCommand::Build { notebook } } => print(out, &CellDag::build(&read_notebook(&notebook)?).view()),
        Command::Context { command: ContextCommand::Get { notebook, query, scope, gateway } } => {
            let nb = read_notebook(&notebook)?;
            let dag = CellDag::build(&nb);
            let scope = scope.scope();
            let needs_model = scope.level == ScopeLevel::Notebook && scope.data_variable.is_none();
            let gw = if needs_model || gateway.fixtures.is_some() {
                Some(build_gateway(&gateway.config()?.gateway, "")?.0)
            } else {
                None
            };
            let cfg = match &gateway.config {
                Some(_) => gateway.config()?.context,
                None => ContextConfig::default(),
            };
            let bundle = retrieve_context(&dag, &nb, &scope, &query, &SharedBuffer::default(), gw.as_ref(), &cfg)?;
            print(out, &bundle)
        }
        Command::Replay { scenario } => print(out, &replay(&scenario)?),
    }
}

/// Runs the HTTP service until SIGINT or SIGTERM.
pub fn serve_blocking(
    gateway: GatewayArgs,
    bind: Option<String>,
    store: Option<PathBuf>,
    world: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), ServiceError> {
    let mut cfg = gateway.config()?;
    if let Some(b) = bind {
        cfg.server.bind = b;
    }
    if let Some(s) = store {
        cfg.store.dir = s;
    }
    if world.is_some() {
        cfg.world = world;
    }
    cfg.validate()?;
    let addr = cfg.bind_addr().map_err(|message| ServiceError::Bind { addr: cfg.server.bind.clone(), message })?;
    let service = Arc::new(Service::open(cfg)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| ServiceError::Bind { addr: addr.to_string(), message: e.to_string() })?;
        let local = listener.local_addr().map_err(|e| ServiceError::Internal(e.to_string()))?;
        writeln!(out, "listening on {local}").and_then(|_| out.flush()).map_err(|e| ServiceError::Internal(e.to_string()))?;
        tracing::info!(%local, "serving");
        crate::http::serve(service, listener, shutdown_signal()).await
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}
