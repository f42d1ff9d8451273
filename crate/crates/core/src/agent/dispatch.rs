//! The proxy's dispatch loop: deliver selected units, run the agent, deposit
//! its unit, retry on failure within the call budget, finish every agent and
//! synthesize the answer.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::buffer::SharedBuffer;
use super::plan::{selective_retrieve, CommPlan};
use super::spec::AgentRegistry;
use super::unit::{Content, InformationUnit, UnitKey};
use super::workflow::{run_agent_workflow, Runtime, TaskEnvelope};
use super::{AgentState, KernelError};
use crate::context::ContextBundle;
use crate::gateway::CompletionRequest;

pub const TAG_SYNTHESIZE: &str = "agent.synthesize";
pub const PROXY: &str = "proxy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispatchConfig {
    /// Maximum Execution episodes per agent per run.
    pub call_budget: u32,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        DispatchConfig { call_budget: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEventKind {
    /// Proxy forwards a unit (or nothing, with no `unit_key`) to an agent.
    Deliver,
    /// Agent enters Execution.
    Execute,
    /// Proxy deposits the agent's unit; agent back to Wait.
    Put,
    /// Attempt failed; the error unit is deposited for the next attempt.
    Fail,
    Finish,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub event: TraceEventKind,
    pub agent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<AgentState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_key: Option<UnitKey>,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        self.events.iter().map(|e| serde_json::to_string(e).unwrap_or_default() + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let events = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(Trace { events })
    }

    pub fn episodes(&self, agent: &str) -> usize {
        self.events.iter().filter(|e| e.agent == agent && e.event == TraceEventKind::Execute).count()
    }

    /// Last recorded state per agent.
    pub fn final_states(&self) -> BTreeMap<String, AgentState> {
        let mut out = BTreeMap::new();
        for e in &self.events {
            if let Some(s) = e.state {
                out.insert(e.agent.clone(), s);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub text: String,
    /// Units carrying SQL, code or chart artifacts the answer refers to.
    pub artifacts: Vec<UnitKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchOutcome {
    pub answer: FinalAnswer,
    pub trace: Trace,
    /// Final unit of each agent, in plan order.
    pub units: Vec<InformationUnit>,
}

struct Recorder<'a> {
    trace: Trace,
    rt: &'a Runtime<'a>,
}

impl Recorder<'_> {
    fn log(&mut self, event: TraceEventKind, agent: &str, state: Option<AgentState>, unit_key: Option<UnitKey>, detail: Option<String>) {
        self.trace.events.push(TraceEvent { event, agent: agent.to_string(), state, unit_key, timestamp: self.rt.clock.now(), detail });
    }
}

fn retryable(e: &KernelError) -> bool {
    matches!(e, KernelError::InvalidModelOutput(_) | KernelError::ToolFailure { .. } | KernelError::StepTimeout { .. })
}

/// Runs the plan sequentially in topological order. `task` supplies the
/// query, data source and knowledge; each agent's envelope adds its subtask
/// and the previous attempt's error.
pub fn dispatch(
    plan: &CommPlan,
    buffer: &SharedBuffer,
    registry: &AgentRegistry,
    task: &TaskEnvelope,
    context: &ContextBundle,
    rt: &Runtime,
    cfg: DispatchConfig,
) -> Result<DispatchOutcome, KernelError> {
    let mut rec = Recorder { trace: Trace::default(), rt };
    let mut produced = Vec::new();
    for node in &plan.nodes {
        let spec = registry.get(&node.agent).ok_or_else(|| KernelError::UnknownAgent(node.agent.clone()))?;
        let action = spec.terminal_step()?.id.clone();
        let mut env = TaskEnvelope { subtask: node.subtask.clone(), feedback: None, ..task.clone() };
        let mut attempts = 0;
        loop {
            if attempts == cfg.call_budget {
                return Err(KernelError::BudgetExhausted { agent: node.agent.clone(), trace: Box::new(rec.trace) });
            }
            attempts += 1;
            let delivered = selective_retrieve(plan, buffer, &node.agent)?;
            if delivered.is_empty() {
                rec.log(TraceEventKind::Deliver, &node.agent, Some(AgentState::Wait), None, None);
            }
            for u in &delivered {
                rec.log(TraceEventKind::Deliver, &node.agent, Some(AgentState::Wait), Some(u.key()), None);
            }
            rec.log(TraceEventKind::Execute, &node.agent, Some(AgentState::Execution), None, Some(format!("attempt {attempts}")));
            match run_agent_workflow(spec, &env, context, &delivered, rt) {
                Ok(unit) => {
                    let key = unit.key();
                    buffer.put(unit.clone())?;
                    rec.log(TraceEventKind::Put, &node.agent, Some(AgentState::Wait), Some(key), None);
                    produced.push(unit);
                    break;
                }
                Err(e) if retryable(&e) => {
                    let message = e.to_string();
                    let unit = InformationUnit {
                        data_source: env.data_source.clone(),
                        role: node.agent.clone(),
                        action: action.clone(),
                        description: format!("failed attempt {attempts} at: {}", node.subtask),
                        content: Content::Error(message.clone()),
                        timestamp: rt.clock.now(),
                        origin_cell: None,
                    };
                    let key = unit.key();
                    buffer.put(unit)?;
                    rec.log(TraceEventKind::Fail, &node.agent, Some(AgentState::Wait), Some(key), Some(message.clone()));
                    env.feedback = Some(message);
                }
                Err(e) => return Err(e),
            }
        }
    }
    for node in &plan.nodes {
        rec.log(TraceEventKind::Finish, &node.agent, Some(AgentState::Finish), None, None);
    }

    let agents: BTreeSet<&str> = plan.agents().collect();
    let live: Vec<InformationUnit> = buffer.live().into_iter().filter(|u| agents.contains(u.role.as_str())).collect();
    let mut prompt = format!(
        "Answer the user's query from the agents' results. Refer to SQL, code and charts by their role and action.\n\nQuery: {}\n",
        task.query
    );
    for u in &live {
        prompt.push_str(&format!(
            "\n[{} / {} on {} at {}] {}\n{}\n",
            u.role,
            u.action,
            u.data_source,
            u.timestamp.to_rfc3339(),
            u.description,
            u.content.render()
        ));
    }
    let text = rt.gateway.complete(&CompletionRequest::new(TAG_SYNTHESIZE, prompt))?.trim().to_string();
    let artifacts = produced
        .iter()
        .filter(|u| matches!(u.content, Content::Sql(_) | Content::Code(_) | Content::ChartSpec(_)))
        .map(InformationUnit::key)
        .collect();
    rec.log(TraceEventKind::Answer, PROXY, None, None, None);
    Ok(DispatchOutcome { answer: FinalAnswer { text, artifacts }, trace: rec.trace, units: produced })
}
