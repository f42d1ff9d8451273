//! Communication plans: which agents take part, which subtask each owns, and
//! along which edges their units flow.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::buffer::SharedBuffer;
use super::spec::AgentRegistry;
use super::unit::InformationUnit;
use super::{Capability, KernelError};
use crate::context::QueryScope;
use crate::gateway::{CompletionRequest, Gateway};
use crate::text::extract_json;

pub const PLAN_SCHEMA_ID: &str = "plan.v1";
pub const PLAN_SCHEMA: &str = include_str!("../../schemas/plan.v1.schema.json");
pub const TAG_PLAN: &str = "agent.plan";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanNode {
    pub agent: String,
    pub subtask_id: String,
    pub subtask: String,
    pub capability: Capability,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    pub to: String,
}

/// Validated plan. `nodes` is in topological order of `transitions`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommPlan {
    pub nodes: Vec<PlanNode>,
    pub transitions: Vec<Transition>,
}

impl CommPlan {
    pub fn agents(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.agent.as_str())
    }

    pub fn node(&self, agent: &str) -> Option<&PlanNode> {
        self.nodes.iter().find(|n| n.agent == agent)
    }

    pub fn producers_of(&self, consumer: &str) -> BTreeSet<&str> {
        self.transitions.iter().filter(|t| t.to == consumer).map(|t| t.from.as_str()).collect()
    }

    /// Validates structure against the registry and orders nodes
    /// topologically (ties keep the given order).
    pub fn new(nodes: Vec<PlanNode>, transitions: Vec<Transition>, registry: &AgentRegistry) -> Result<Self, KernelError> {
        let invalid = |m: String| KernelError::InvalidModelOutput(m);
        if nodes.is_empty() {
            return Err(invalid("plan has no subtasks".into()));
        }
        let mut position = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            let spec = registry.get(&n.agent).ok_or_else(|| invalid(format!("unknown agent `{}`", n.agent)))?;
            if !spec.capabilities.contains(&n.capability) {
                return Err(invalid(format!("agent `{}` lacks capability {}", n.agent, n.capability)));
            }
            if position.insert(n.agent.clone(), i).is_some() {
                return Err(invalid(format!("agent `{}` assigned more than one subtask", n.agent)));
            }
        }
        let mut seen = BTreeSet::new();
        for t in &transitions {
            for end in [&t.from, &t.to] {
                if !position.contains_key(end) {
                    return Err(invalid(format!("transition endpoint `{end}` is not in the plan")));
                }
            }
            if t.from == t.to {
                return Err(invalid(format!("self transition on `{}`", t.from)));
            }
            if !seen.insert(t.clone()) {
                return Err(invalid(format!("duplicate transition {} -> {}", t.from, t.to)));
            }
        }
        let mut indegree = vec![0usize; nodes.len()];
        for t in &transitions {
            indegree[position[&t.to]] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::new();
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for t in transitions.iter().filter(|t| t.from == nodes[i].agent) {
                let j = position[&t.to];
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        if order.len() != nodes.len() {
            return Err(invalid("transitions contain a cycle".into()));
        }
        let mut slots: Vec<Option<PlanNode>> = nodes.into_iter().map(Some).collect();
        let nodes = order.into_iter().map(|i| slots[i].take().expect("each index once")).collect();
        let mut transitions = transitions;
        transitions.sort();
        Ok(CommPlan { nodes, transitions })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubtask {
    id: String,
    description: String,
    capability: Capability,
    #[serde(default)]
    agent: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    subtasks: Vec<RawSubtask>,
    #[serde(default)]
    transitions: Vec<Transition>,
}

/// Parses and validates a model-written plan. Subtasks without an agent are
/// assigned the first registered agent with the capability.
pub fn parse_plan(reply: &str, registry: &AgentRegistry) -> Result<CommPlan, KernelError> {
    let v = extract_json(reply).ok_or_else(|| KernelError::InvalidModelOutput("no JSON plan in reply".into()))?;
    let raw: RawPlan = serde_json::from_value(v).map_err(|e| KernelError::InvalidModelOutput(format!("plan: {e}")))?;
    let mut nodes = Vec::new();
    for s in raw.subtasks {
        if registry.capable(s.capability).is_none() {
            return Err(KernelError::NoCapableAgent(s.capability.to_string()));
        }
        let agent = match s.agent {
            Some(a) => a,
            None => registry.capable(s.capability).map(|a| a.id.clone()).unwrap_or_default(),
        };
        nodes.push(PlanNode { agent, subtask_id: s.id, subtask: s.description, capability: s.capability });
    }
    CommPlan::new(nodes, raw.transitions, registry)
}

pub fn plan(query: &str, scope: &QueryScope, registry: &AgentRegistry, gateway: &Gateway) -> Result<CommPlan, KernelError> {
    if registry.is_empty() {
        return Err(KernelError::NoAgents);
    }
    let agents: Vec<String> = registry
        .agents()
        .map(|a| {
            let caps: Vec<&str> = a.capabilities.iter().map(|c| c.as_str()).collect();
            format!("- {} [{}]: {}", a.id, caps.join(", "), a.description)
        })
        .collect();
    let prompt = format!(
        "Plan how the agents below answer the query. Split it into subtasks, give each subtask the capability it \
         needs and the agent that owns it, and list transitions from producing agents to the agents that need their \
         results. Reply with JSON {{\"subtasks\": [{{\"id\", \"description\", \"capability\", \"agent\"}}], \
         \"transitions\": [{{\"from\", \"to\"}}]}}.\n\nAgents:\n{}\n\nTask type: {}\nQuery: {query}",
        agents.join("\n"),
        scope.task_type
    );
    let reply = gateway.complete(&CompletionRequest::new(TAG_PLAN, prompt).with_schema(PLAN_SCHEMA_ID))?;
    parse_plan(&reply, registry)
}

/// Live units produced by agents with an edge into `consumer`, ordered by
/// timestamp then buffer sequence.
pub fn selective_retrieve(plan: &CommPlan, buffer: &SharedBuffer, consumer: &str) -> Result<Vec<InformationUnit>, KernelError> {
    if plan.node(consumer).is_none() {
        return Err(KernelError::UnknownAgent(consumer.to_string()));
    }
    let producers = plan.producers_of(consumer);
    let mut units: Vec<(u64, InformationUnit)> =
        buffer.snapshot().units.into_iter().filter(|(_, u)| producers.contains(u.role.as_str())).collect();
    units.sort_by(|(sa, a), (sb, b)| a.timestamp.cmp(&b.timestamp).then(sa.cmp(sb)));
    Ok(units.into_iter().map(|(_, u)| u).collect())
}
