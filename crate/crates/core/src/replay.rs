//! Fixture worlds and replay scenarios.
//!
//! A world directory holds `*.table.json` tables, `*.bundle.json` knowledge
//! bundles, an optional `glossary.json` and `embeddings.jsonl`. A scenario
//! directory holds `scenario.json` plus recorded completion fixtures
//! (`*.jsonl`); replaying it runs every step against the scripted gateway
//! with a step clock, so two runs produce identical output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{InformationUnit, Trace};
use crate::clock::{Clock, StepClock};
use crate::context::QueryScope;
use crate::gateway::{Gateway, GatewayError, Provider, ScriptedProvider};
use crate::graph::{GlossaryEntry, GraphError, KnowledgeGraph};
use crate::knowledge::KnowledgeBundle;
use crate::notebook::Notebook;
use crate::session::{Decision, Engine, Session, SessionError, Suggestion};
use crate::table::Table;

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("step {step}: {source}")]
    Step { step: usize, source: SessionError },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReplayError {
    ReplayError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ReplayError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn files_ending(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>, ReplayError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct World {
    pub dir: PathBuf,
    pub graph: KnowledgeGraph,
    pub tables: BTreeMap<String, Table>,
    pub embeddings: String,
}

impl World {
    pub fn load(dir: &Path) -> Result<Self, ReplayError> {
        let mut tables = BTreeMap::new();
        for p in files_ending(dir, ".table.json")? {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().trim_end_matches(".table.json").to_string();
            tables.insert(name, read_json::<Table>(&p)?);
        }
        let mut graph = KnowledgeGraph::new();
        for p in files_ending(dir, ".bundle.json")? {
            graph.upsert_bundle(&read_json::<KnowledgeBundle>(&p)?)?;
        }
        let glossary = dir.join("glossary.json");
        if glossary.exists() {
            graph.upsert_glossary(&read_json::<Vec<GlossaryEntry>>(&glossary)?)?;
        }
        let emb = dir.join("embeddings.jsonl");
        let embeddings = if emb.exists() { std::fs::read_to_string(&emb).map_err(|e| io_err(&emb, e))? } else { String::new() };
        Ok(World { dir: dir.to_path_buf(), graph, tables, embeddings })
    }

    /// Scripted provider over `fixtures` with this world's embeddings.
    pub fn scripted(&self, fixtures: &Path) -> Result<ScriptedProvider, ReplayError> {
        let mut p = if fixtures.is_dir() { ScriptedProvider::load_dir(fixtures)? } else { ScriptedProvider::new() };
        p.load_embeddings(&self.embeddings)?;
        Ok(p)
    }

    pub fn engine(&self, provider: Arc<dyn Provider>, clock: Arc<dyn Clock>) -> Result<Engine, ReplayError> {
        let mut engine = Engine::new(Gateway::new(provider), self.tables.clone(), clock)?;
        engine.set_graph(self.graph.clone())?;
        Ok(engine)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum ScenarioStep {
    Ask { query: String, scope: QueryScope },
    Resolve { decision: Decision },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// World directory, relative to the scenario directory.
    pub world: String,
    pub notebook: Notebook,
    pub steps: Vec<ScenarioStep>,
}

impl Scenario {
    pub fn load(dir: &Path) -> Result<Self, ReplayError> {
        read_json(&dir.join("scenario.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub name: String,
    pub suggestions: Vec<Suggestion>,
    pub notebook: Notebook,
    pub buffer: Vec<InformationUnit>,
}

impl ScenarioRun {
    pub fn traces(&self) -> Vec<&Trace> {
        self.suggestions.iter().map(|s| &s.trace).collect()
    }
}

/// Runs a scenario against an explicit provider.
pub fn run_with(scenario: &Scenario, world: &World, provider: Arc<dyn Provider>) -> Result<ScenarioRun, ReplayError> {
    let engine = world.engine(provider, Arc::new(StepClock::fixed()))?;
    let mut session = Session::new(scenario.name.clone(), scenario.notebook.clone());
    let mut suggestions = Vec::new();
    for (i, step) in scenario.steps.iter().enumerate() {
        let fail = |source| ReplayError::Step { step: i, source };
        match step {
            ScenarioStep::Ask { query, scope } => suggestions.push(session.ask(&engine, query, scope).map_err(fail)?.clone()),
            ScenarioStep::Resolve { decision } => {
                session.resolve(decision.clone()).map_err(fail)?;
            }
        }
    }
    Ok(ScenarioRun { name: scenario.name.clone(), suggestions, notebook: session.notebook, buffer: session.buffer.live() })
}

/// Replays a scenario directory against its recorded fixtures.
pub fn replay(dir: &Path) -> Result<ScenarioRun, ReplayError> {
    let scenario = Scenario::load(dir)?;
    let world = World::load(&dir.join(&scenario.world))?;
    let provider = world.scripted(dir)?;
    run_with(&scenario, &world, Arc::new(provider))
}
