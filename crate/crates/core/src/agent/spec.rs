//! Agent specifications: capabilities plus a workflow DAG whose nodes are
//! gateway calls, rule-based DSL renderings or tool calls.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Capability, KernelError};

/// Inputs a step may read from the task envelope instead of a predecessor.
pub const ENVELOPE_INPUTS: [&str; 5] = ["query", "context", "knowledge", "units", "feedback"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Dsl,
    Sql,
    Code,
    ChartSpec,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderTarget {
    Sql,
    Chart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    Llm { tag: String, instruction: String, output: Payload },
    Render { target: RenderTarget },
    Tool { tool: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub id: String,
    #[serde(flatten)]
    pub kind: StepKind,
    #[serde(default)]
    pub inputs: Vec<String>,
}

impl Step {
    pub fn llm(id: &str, tag: &str, instruction: &str, output: Payload, inputs: &[&str]) -> Self {
        Step {
            id: id.into(),
            kind: StepKind::Llm { tag: tag.into(), instruction: instruction.into(), output },
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn render(id: &str, target: RenderTarget, input: &str) -> Self {
        Step { id: id.into(), kind: StepKind::Render { target }, inputs: vec![input.into()] }
    }

    pub fn tool(id: &str, tool: &str, inputs: &[&str]) -> Self {
        Step { id: id.into(), kind: StepKind::Tool { tool: tool.into() }, inputs: inputs.iter().map(|s| s.to_string()).collect() }
    }
}

/// An agent. Its `id` doubles as the `role` of every unit it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub description: String,
    pub capabilities: BTreeSet<Capability>,
    pub workflow: Vec<Step>,
}

impl AgentSpec {
    fn invalid(&self, message: impl Into<String>) -> KernelError {
        KernelError::InvalidSpec { agent: self.id.clone(), message: message.into() }
    }

    /// Steps in execution order: a topological order of the input edges,
    /// ties broken by declaration order.
    pub fn topological_steps(&self) -> Result<Vec<&Step>, KernelError> {
        let index: BTreeMap<&str, usize> = self.workflow.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        if index.len() != self.workflow.len() {
            return Err(self.invalid("duplicate step id"));
        }
        let mut indegree = vec![0usize; self.workflow.len()];
        let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); self.workflow.len()];
        for (i, step) in self.workflow.iter().enumerate() {
            for input in &step.inputs {
                match index.get(input.as_str()) {
                    Some(&j) => {
                        indegree[i] += 1;
                        consumers[j].push(i);
                    }
                    None if ENVELOPE_INPUTS.contains(&input.as_str()) => {}
                    None => return Err(self.invalid(format!("step `{}` reads unknown input `{input}`", step.id))),
                }
            }
        }
        let mut ready: BTreeSet<usize> = (0..self.workflow.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.workflow.len());
        while let Some(i) = ready.pop_first() {
            order.push(&self.workflow[i]);
            for &c in &consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != self.workflow.len() {
            return Err(self.invalid("workflow has a cycle"));
        }
        Ok(order)
    }

    /// The single step no other step reads from; its id names the action of
    /// the agent's output unit.
    pub fn terminal_step(&self) -> Result<&Step, KernelError> {
        let read: BTreeSet<&str> = self.workflow.iter().flat_map(|s| s.inputs.iter().map(String::as_str)).collect();
        let sinks: Vec<&Step> = self.workflow.iter().filter(|s| !read.contains(s.id.as_str())).collect();
        match sinks.as_slice() {
            [one] => Ok(one),
            [] => Err(self.invalid("workflow is empty")),
            _ => Err(self.invalid(format!("workflow has {} terminal steps", sinks.len()))),
        }
    }

    pub fn validate(&self, tools: &BTreeSet<String>) -> Result<(), KernelError> {
        if self.id.trim().is_empty() {
            return Err(self.invalid("empty id"));
        }
        if self.capabilities.is_empty() {
            return Err(self.invalid("no capabilities"));
        }
        self.topological_steps()?;
        self.terminal_step()?;
        let dsl_steps: BTreeSet<&str> = self
            .workflow
            .iter()
            .filter(|s| matches!(s.kind, StepKind::Llm { output: Payload::Dsl, .. }))
            .map(|s| s.id.as_str())
            .collect();
        for step in &self.workflow {
            match &step.kind {
                StepKind::Tool { tool } if !tools.contains(tool) => {
                    return Err(self.invalid(format!("step `{}` needs unregistered tool `{tool}`", step.id)));
                }
                StepKind::Render { .. } if step.inputs.len() != 1 || !dsl_steps.contains(step.inputs[0].as_str()) => {
                    return Err(self.invalid(format!("render step `{}` must read exactly one DSL step", step.id)));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentRegistry {
    agents: BTreeMap<String, AgentSpec>,
}

impl AgentRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: AgentSpec) {
        self.agents.insert(spec.id.clone(), spec);
    }

    pub fn get(&self, id: &str) -> Option<&AgentSpec> {
        self.agents.get(id)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentSpec> {
        self.agents.values()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// First agent (by id) offering `cap`.
    pub fn capable(&self, cap: Capability) -> Option<&AgentSpec> {
        self.agents.values().find(|a| a.capabilities.contains(&cap))
    }

    pub fn validate(&self, tools: &BTreeSet<String>) -> Result<(), KernelError> {
        if self.agents.is_empty() {
            return Err(KernelError::NoAgents);
        }
        self.agents.values().try_for_each(|a| a.validate(tools))
    }

    /// SQL, visualization, Python and insight agents wired to the default
    /// tool names `sql_executor`, `chart_renderer` and `code_sandbox`.
    pub fn standard() -> Self {
        let mut r = AgentRegistry::new();
        r.register(AgentSpec {
            id: "SQL Agent".into(),
            description: "Translates a question into a DSL specification over the retrieved knowledge and renders it as SQL".into(),
            capabilities: [Capability::Nl2Sql].into(),
            workflow: vec![
                Step::llm(
                    "translate_dsl",
                    "agent.sql.translate_dsl",
                    "Translate the question into a DSL specification (MeasureList, DimensionList, ConditionList, optional OrderList and LimitN) using only the listed columns.",
                    Payload::Dsl,
                    &["query", "knowledge", "context", "feedback"],
                ),
                Step::render("generate_sql_query", RenderTarget::Sql, "translate_dsl"),
            ],
        });
        r.register(AgentSpec {
            id: "VIS Agent".into(),
            description: "Executes the upstream SQL and writes a chart specification over its result".into(),
            capabilities: [Capability::Nl2Vis].into(),
            workflow: vec![
                Step::tool("execute_sql", "sql_executor", &["units"]),
                Step::llm(
                    "generate_chart_spec",
                    "agent.vis.chart_spec",
                    "Write a chart specification (mark, encoding with field and type per channel) that answers the question using the result columns shown.",
                    Payload::ChartSpec,
                    &["query", "execute_sql", "feedback"],
                ),
                Step::tool("render_chart", "chart_renderer", &["generate_chart_spec", "execute_sql"]),
            ],
        });
        r.register(AgentSpec {
            id: "Python Agent".into(),
            description: "Writes pandas code for data preparation and analysis".into(),
            capabilities: [Capability::Nl2DsCode].into(),
            workflow: vec![Step::llm(
                "generate_python_code",
                "agent.python.code",
                "Write Python code that performs the requested analysis on the variables available in the notebook.",
                Payload::Code,
                &["query", "context", "units", "knowledge", "feedback"],
            )],
        });
        r.register(AgentSpec {
            id: "Insight Agent".into(),
            description: "Runs exploratory code in a sandbox and summarizes the findings".into(),
            capabilities: [Capability::Insight].into(),
            workflow: vec![
                Step::llm(
                    "generate_analysis_code",
                    "agent.insight.code",
                    "Write a self-contained Python script that prints the statistics needed to answer the question.",
                    Payload::Code,
                    &["query", "units", "knowledge", "feedback"],
                ),
                Step::tool("execute_code", "code_sandbox", &["generate_analysis_code"]),
                Step::llm(
                    "summarize_insight",
                    "agent.insight.summary",
                    "Summarize the printed results as concise insights that answer the question.",
                    Payload::Text,
                    &["query", "execute_code"],
                ),
            ],
        });
        r
    }
}
