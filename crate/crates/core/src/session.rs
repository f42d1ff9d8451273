//! The ask / resolve loop. An ask runs query rewriting, knowledge
//! retrieval, context retrieval, planning and dispatch, then stages the
//! agents' outputs as proposed cells. Nothing reaches the notebook until the
//! suggestion is resolved.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{
    dispatch, plan, AgentRegistry, CommPlan, Content, DispatchConfig, FinalAnswer, InformationUnit, KernelError,
    Runtime, SharedBuffer, TaskEnvelope, ToolRegistry, Trace, TraceEventKind, UnitKey,
};
use crate::clock::Clock;
use crate::context::{retrieve_context, ContextBundle, ContextConfig, ContextError, QueryScope};
use crate::dag::{CellDag, DagError};
use crate::gateway::{Gateway, GatewayError};
use crate::graph::{
    build_indexes, coarse_retrieve, fine_order, rewrite_query, FineOrder, Indexes, KnowledgeGraph, KnowledgeSource,
    OperatorRegistry, RetrievalConfig, RewriteError, TaskProfile, Turn,
};
use crate::knowledge::{interpret_profile, profile_table, KnowledgeError};
use crate::notebook::{apply_edit, Cell, CellChange, CellEdit, CellKind, Notebook, NotebookError};
use crate::table::Table;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("a suggestion is already pending; resolve it first")]
    PendingSuggestion,
    #[error("no suggestion is pending")]
    NoPendingSuggestion,
    #[error("rewrite: {0}")]
    Rewrite(#[from] RewriteError),
    #[error("knowledge: {0}")]
    Knowledge(String),
    #[error("context: {0}")]
    Context(#[from] ContextError),
    #[error("plan: {0}")]
    Plan(KernelError),
    #[error("dispatch: {0}")]
    Dispatch(KernelError),
    #[error("commit: {0}")]
    Commit(#[from] NotebookError),
    #[error("commit: {0}")]
    Dag(DagError),
}

impl SessionError {
    /// Pipeline stage the error came from.
    pub fn stage(&self) -> &'static str {
        match self {
            SessionError::PendingSuggestion | SessionError::NoPendingSuggestion => "session",
            SessionError::Rewrite(_) => "rewrite",
            SessionError::Knowledge(_) => "knowledge",
            SessionError::Context(_) => "context",
            SessionError::Plan(_) => "plan",
            SessionError::Dispatch(_) => "dispatch",
            SessionError::Commit(_) | SessionError::Dag(_) => "commit",
        }
    }
}

/// Shared, session-independent services.
pub struct Engine {
    pub gateway: Gateway,
    pub graph: KnowledgeGraph,
    pub indexes: Indexes,
    pub retrieval: RetrievalConfig,
    pub context: ContextConfig,
    pub registry: AgentRegistry,
    pub tools: ToolRegistry,
    pub operators: OperatorRegistry,
    pub tables: BTreeMap<String, Table>,
    pub dispatch: DispatchConfig,
    pub profile_seed: u64,
    pub clock: Arc<dyn Clock>,
}

impl Engine {
    /// Engine with an empty graph, the standard agents and tools over
    /// `tables`.
    pub fn new(gateway: Gateway, tables: BTreeMap<String, Table>, clock: Arc<dyn Clock>) -> Result<Self, GatewayError> {
        let graph = KnowledgeGraph::new();
        let indexes = build_indexes(&graph, &Self::profile(), &gateway)?;
        Ok(Engine {
            gateway,
            graph,
            indexes,
            retrieval: RetrievalConfig::default(),
            context: ContextConfig::default(),
            registry: AgentRegistry::standard(),
            tools: ToolRegistry::standard(tables.clone()),
            operators: OperatorRegistry::default(),
            tables,
            dispatch: DispatchConfig::default(),
            profile_seed: 7,
            clock,
        })
    }

    fn profile() -> TaskProfile {
        TaskProfile::preset("nl2dsl").expect("built-in preset")
    }

    /// Replaces the graph and rebuilds both indexes.
    pub fn set_graph(&mut self, graph: KnowledgeGraph) -> Result<(), GatewayError> {
        self.indexes = build_indexes(&graph, &Self::profile(), &self.gateway)?;
        self.graph = graph;
        Ok(())
    }

    pub fn rank_knowledge(&self, query: &str) -> Result<FineOrder, GatewayError> {
        let candidates = coarse_retrieve(query, &self.graph, &self.indexes, &self.retrieval, &self.gateway)?;
        fine_order(query, &candidates, &self.graph, &self.indexes, &self.retrieval, &self.gateway)
    }

    /// Ranked graph knowledge, or a profile of the most relevant table when
    /// the graph yields no columns.
    pub fn retrieve_knowledge(&self, query: &str) -> Result<KnowledgeSource, SessionError> {
        let ranked = self.rank_knowledge(query).map_err(|e| SessionError::Knowledge(e.to_string()))?;
        let source = KnowledgeSource::from_nodes(&self.graph, &ranked.ranked);
        if !source.columns.is_empty() {
            return Ok(source);
        }
        let lower = query.to_lowercase();
        let Some((name, table)) =
            self.tables.iter().find(|(n, _)| lower.contains(&n.to_lowercase())).or_else(|| self.tables.iter().next())
        else {
            return Ok(source);
        };
        let profile = profile_table(table, self.profile_seed).map_err(|e: KnowledgeError| SessionError::Knowledge(e.to_string()))?;
        let interp = interpret_profile(&profile, &self.gateway).map_err(|e| SessionError::Knowledge(e.to_string()))?;
        Ok(KnowledgeSource::from_profile(name, &profile, &interp))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub query: String,
    pub rewritten: String,
    /// Proposed cell creations, in notebook order.
    pub edits: Vec<CellEdit>,
    pub plan: CommPlan,
    pub trace: Trace,
    pub answer: FinalAnswer,
    pub context_cells: Vec<String>,
    pub knowledge: KnowledgeSource,
    /// Units produced by the run; proposed cells link back through
    /// `cell_units`.
    pub units: Vec<InformationUnit>,
    pub cell_units: BTreeMap<String, UnitKey>,
    #[serde(skip)]
    pre_ask: Vec<InformationUnit>,
}

impl Suggestion {
    pub fn cells(&self) -> Vec<&Cell> {
        self.edits
            .iter()
            .filter_map(|e| match e {
                CellEdit::Create { cell, .. } | CellEdit::Modify { cell, .. } => Some(cell),
                CellEdit::Delete { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum Decision {
    Accept,
    /// Commit these cells instead of the proposed ones.
    Edit { cells: Vec<Cell> },
    Reject,
}

pub struct Session {
    pub id: String,
    pub notebook: Notebook,
    pub dag: CellDag,
    pub buffer: SharedBuffer,
    pub history: Vec<Turn>,
    pending: Option<Suggestion>,
    /// Every committed change, in order.
    pub audit: Vec<CellChange>,
}

impl Session {
    pub fn new(id: impl Into<String>, notebook: Notebook) -> Self {
        Session {
            id: id.into(),
            dag: CellDag::build(&notebook),
            notebook,
            buffer: SharedBuffer::default(),
            history: Vec::new(),
            pending: None,
            audit: Vec::new(),
        }
    }

    pub fn with_buffer(mut self, buffer: SharedBuffer) -> Self {
        self.buffer = buffer;
        self
    }

    pub fn pending(&self) -> Option<&Suggestion> {
        self.pending.as_ref()
    }

    /// Commits one edit through `apply_edit` and updates the DAG. Syntax
    /// errors in the new cell are kept as DAG diagnostics, not failures.
    pub fn apply(&mut self, edit: &CellEdit) -> Result<CellChange, SessionError> {
        let (nb, change) = apply_edit(&self.notebook, edit)?;
        let mut dag = self.dag.clone();
        match dag.update(&change) {
            Ok(()) | Err(DagError::Syntax { .. }) => {}
            Err(e) => return Err(SessionError::Dag(e)),
        }
        self.notebook = nb;
        self.dag = dag;
        self.audit.push(change.clone());
        Ok(change)
    }

    /// Applies all edits or none.
    pub fn apply_all(&mut self, edits: &[CellEdit]) -> Result<Vec<CellChange>, SessionError> {
        let saved = (self.notebook.clone(), self.dag.clone(), self.audit.len());
        let mut changes = Vec::new();
        for e in edits {
            match self.apply(e) {
                Ok(c) => changes.push(c),
                Err(err) => {
                    self.notebook = saved.0;
                    self.dag = saved.1;
                    self.audit.truncate(saved.2);
                    return Err(err);
                }
            }
        }
        Ok(changes)
    }

    pub fn ask(&mut self, engine: &Engine, query: &str, scope: &QueryScope) -> Result<&Suggestion, SessionError> {
        if self.pending.is_some() {
            return Err(SessionError::PendingSuggestion);
        }
        let pre_ask = self.buffer.live();
        let rewrite = rewrite_query(query, &self.history, engine.clock.now(), &engine.gateway)?;
        let knowledge = engine.retrieve_knowledge(&rewrite.text)?;
        let context: ContextBundle = retrieve_context(
            &self.dag,
            &self.notebook,
            scope,
            &rewrite.text,
            &self.buffer,
            Some(&engine.gateway),
            &engine.context,
        )?;
        let plan = plan(&rewrite.text, scope, &engine.registry, &engine.gateway).map_err(SessionError::Plan)?;
        let data_source = knowledge
            .table
            .clone()
            .or_else(|| context.data_variable.clone())
            .unwrap_or_else(|| self.notebook.id.clone());
        let task = TaskEnvelope {
            query: rewrite.text.clone(),
            subtask: String::new(),
            data_source,
            knowledge: knowledge.clone(),
            feedback: None,
        };
        let rt = Runtime { gateway: &engine.gateway, tools: &engine.tools, operators: &engine.operators, clock: engine.clock.as_ref() };
        let outcome = dispatch(&plan, &self.buffer, &engine.registry, &task, &context, &rt, engine.dispatch)
            .map_err(SessionError::Dispatch)?;

        let (edits, cell_units) = self.materialize(&outcome.units, context.data_variable.as_deref());
        self.history.push(Turn { query: query.to_string(), rewritten: Some(rewrite.text.clone()) });
        self.pending = Some(Suggestion {
            query: query.to_string(),
            rewritten: rewrite.text,
            edits,
            plan,
            trace: outcome.trace,
            answer: outcome.answer,
            context_cells: context.cells.iter().map(|c| c.id.clone()).collect(),
            knowledge,
            units: outcome.units,
            cell_units,
            pre_ask,
        });
        Ok(self.pending.as_ref().expect("just set"))
    }

    fn fresh(&self, taken: &BTreeSet<String>, stem: &str) -> String {
        (1..).map(|n| format!("{stem}{n}")).find(|c| !taken.contains(c)).expect("unbounded")
    }

    /// One proposed cell per produced unit: SQL, Python, chart or markdown.
    /// Charts bind to the SQL result proposed in the same run, else to the
    /// context's data variable.
    fn materialize(&self, units: &[InformationUnit], fallback_var: Option<&str>) -> (Vec<CellEdit>, BTreeMap<String, UnitKey>) {
        let mut ids: BTreeSet<String> = self.notebook.cells.iter().map(|c| c.id.clone()).collect();
        let mut vars: BTreeSet<String> = self.dag.defined_variables().cloned().collect();
        let turn = self.history.len() + 1;
        let mut edits = Vec::new();
        let mut links = BTreeMap::new();
        let mut last_sql: Option<String> = None;
        for u in units {
            let id = self.fresh(&ids, &format!("q{turn}_"));
            let cell = match &u.content {
                Content::Sql(sql) => {
                    let var = self.fresh(&vars, &format!("q{turn}_result"));
                    vars.insert(var.clone());
                    last_sql = Some(var.clone());
                    Cell::sql(&id, sql, Some(&var))
                }
                Content::Code(code) => Cell::python(&id, code),
                Content::ChartSpec(spec) => {
                    let Some(var) = last_sql.clone().or(fallback_var.map(str::to_string)) else { continue };
                    Cell::chart(&id, serde_json::to_string_pretty(spec).unwrap_or_default(), &var)
                }
                Content::Text(text) => Cell::markdown(&id, text),
                Content::TablePreview(_) | Content::Error(_) => continue,
            };
            ids.insert(id.clone());
            links.insert(id, u.key());
            edits.push(CellEdit::Create { cell, index: None });
        }
        (edits, links)
    }

    /// Resolves the pending suggestion; returns the notebook revision.
    pub fn resolve(&mut self, decision: Decision) -> Result<u64, SessionError> {
        let suggestion = self.pending.take().ok_or(SessionError::NoPendingSuggestion)?;
        let edits = match &decision {
            Decision::Accept => suggestion.edits.clone(),
            Decision::Edit { cells } => cells.iter().map(|c| CellEdit::Create { cell: c.clone(), index: None }).collect(),
            Decision::Reject => {
                self.discard_units(&suggestion);
                return Ok(self.notebook.revision);
            }
        };
        if let Err(e) = self.apply_all(&edits) {
            self.pending = Some(suggestion);
            return Err(e);
        }
        for edit in &edits {
            let CellEdit::Create { cell, .. } = edit else { continue };
            let Some(key) = suggestion.cell_units.get(&cell.id) else { continue };
            if let Some(mut unit) = self.buffer.get(key) {
                if cell.kind != CellKind::Markdown || matches!(unit.content, Content::Text(_)) {
                    unit.origin_cell = Some(cell.id.clone());
                    let _ = self.buffer.put(unit);
                }
            }
        }
        Ok(self.notebook.revision)
    }

    /// Retracts the run's units and restores pre-ask units they displaced,
    /// so the live set matches the one before the ask.
    fn discard_units(&mut self, s: &Suggestion) {
        let keys: BTreeSet<UnitKey> = s
            .trace
            .events
            .iter()
            .filter(|e| matches!(e.event, TraceEventKind::Put | TraceEventKind::Fail))
            .filter_map(|e| e.unit_key.clone())
            .collect();
        let pre: BTreeMap<UnitKey, &InformationUnit> = s.pre_ask.iter().map(|u| (u.key(), u)).collect();
        for key in keys {
            if pre.get(&key).is_some_and(|u| self.buffer.get(&key).as_ref() == Some(*u)) {
                continue;
            }
            self.buffer.retract(&key);
            if let Some(u) = pre.get(&key) {
                let _ = self.buffer.put((*u).clone());
            }
        }
    }
}
