//! Executes one agent's workflow DAG and wraps the terminal output as an
//! information unit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::spec::{AgentSpec, Payload, RenderTarget, StepKind};
use super::tools::{ToolError, ToolInput, ToolRegistry};
use super::unit::{Content, InformationUnit};
use super::KernelError;
use crate::analysis::{python, sql};
use crate::clock::Clock;
use crate::context::ContextBundle;
use crate::gateway::{CompletionRequest, Gateway};
use crate::graph::{
    dsl_to_sql, dsl_to_vis, parse_dsl_reply, validate_chart_spec, DslSpec, KnowledgeSource, OperatorRegistry,
    DSL_SCHEMA_ID,
};
use crate::text::extract_json;

/// What the proxy hands an agent besides the units it selected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskEnvelope {
    pub query: String,
    pub subtask: String,
    pub data_source: String,
    pub knowledge: KnowledgeSource,
    /// Error from this agent's previous attempt, if it failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

/// Shared services a workflow runs against.
#[derive(Clone, Copy)]
pub struct Runtime<'a> {
    pub gateway: &'a Gateway,
    pub tools: &'a ToolRegistry,
    pub operators: &'a OperatorRegistry,
    pub clock: &'a dyn Clock,
}

#[derive(Debug, Clone)]
enum Output {
    Dsl(DslSpec),
    Content(Content),
}

impl Output {
    fn content(&self) -> Content {
        match self {
            Output::Dsl(d) => Content::Text(serde_json::to_string(d).unwrap_or_default()),
            Output::Content(c) => c.clone(),
        }
    }
}

fn strip_fences(reply: &str) -> String {
    let t = reply.trim();
    let Some(start) = t.find("```") else { return t.to_string() };
    let body = &t[start + 3..];
    let body = body.split_once('\n').map(|(_, rest)| rest).unwrap_or("");
    body.split("```").next().unwrap_or("").trim().to_string()
}

fn render_units(units: &[InformationUnit]) -> String {
    units
        .iter()
        .map(|u| format!("[{} / {} on {}] {}\n{}", u.role, u.action, u.data_source, u.description, u.content.render()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn parse_output(step: &str, payload: Payload, reply: &str, env: &TaskEnvelope, rt: &Runtime) -> Result<Output, KernelError> {
    let invalid = |m: String| KernelError::InvalidModelOutput(format!("step `{step}`: {m}"));
    Ok(match payload {
        Payload::Dsl => {
            let known = env.knowledge.column_names();
            Output::Dsl(parse_dsl_reply(reply, &known, rt.operators).map_err(|e| invalid(e.to_string()))?)
        }
        Payload::Sql => {
            let s = strip_fences(reply);
            sql::check(&s).map_err(|e| invalid(e.to_string()))?;
            if s.is_empty() {
                return Err(invalid("empty SQL".into()));
            }
            Output::Content(Content::Sql(s))
        }
        Payload::Code => {
            let s = strip_fences(reply);
            python::check(&s).map_err(|e| invalid(e.to_string()))?;
            if s.is_empty() {
                return Err(invalid("empty code".into()));
            }
            Output::Content(Content::Code(s))
        }
        Payload::ChartSpec => {
            let v = extract_json(reply).ok_or_else(|| invalid("no JSON chart spec".into()))?;
            validate_chart_spec(&v).map_err(invalid)?;
            Output::Content(Content::ChartSpec(v))
        }
        Payload::Text => {
            let s = reply.trim();
            if s.is_empty() {
                return Err(invalid("empty reply".into()));
            }
            Output::Content(Content::Text(s.to_string()))
        }
    })
}

pub fn run_agent_workflow(
    spec: &AgentSpec,
    env: &TaskEnvelope,
    context: &ContextBundle,
    units: &[InformationUnit],
    rt: &Runtime,
) -> Result<InformationUnit, KernelError> {
    spec.validate(&rt.tools.names())?;
    let terminal = spec.terminal_step()?.id.clone();
    let mut outputs: BTreeMap<String, Output> = BTreeMap::new();
    for step in spec.topological_steps()? {
        let out = match &step.kind {
            StepKind::Llm { tag, instruction, output } => {
                let mut prompt = format!("{instruction}\n\n## Task\n{}\n", env.subtask);
                for input in &step.inputs {
                    let section = match input.as_str() {
                        "query" => Some(("Question", env.query.clone())),
                        "context" => Some(("Notebook context", context.render())),
                        "knowledge" => Some(("Knowledge", env.knowledge.render())),
                        "units" if !units.is_empty() => Some(("Upstream results", render_units(units))),
                        "feedback" => env.feedback.clone().map(|f| ("Previous attempt failed", f)),
                        "units" => None,
                        other => Some(("Input", format!("{other}: {}", outputs[other].content().render()))),
                    };
                    if let Some((title, body)) = section {
                        prompt.push_str(&format!("\n## {title}\n{body}\n"));
                    }
                }
                let mut req = CompletionRequest::new(tag.clone(), prompt);
                if *output == Payload::Dsl {
                    req = req.with_schema(DSL_SCHEMA_ID);
                }
                let reply = rt.gateway.complete(&req)?;
                parse_output(&step.id, *output, &reply, env, rt)?
            }
            StepKind::Render { target } => {
                let Some(Output::Dsl(dsl)) = outputs.get(&step.inputs[0]) else {
                    return Err(KernelError::InvalidModelOutput(format!("step `{}` has no DSL input", step.id)));
                };
                let rendered = match target {
                    RenderTarget::Sql => dsl_to_sql(dsl, &env.data_source, rt.operators).map(Content::Sql),
                    RenderTarget::Chart => dsl_to_vis(dsl).map(Content::ChartSpec),
                };
                Output::Content(rendered.map_err(|e| KernelError::InvalidModelOutput(format!("step `{}`: {e}", step.id)))?)
            }
            StepKind::Tool { tool } => {
                let mut inputs = Vec::new();
                for input in &step.inputs {
                    match input.as_str() {
                        "units" => inputs.extend(units.iter().map(|u| u.content.clone())),
                        "query" => inputs.push(Content::Text(env.query.clone())),
                        "context" => inputs.push(Content::Text(context.render())),
                        "knowledge" => inputs.push(Content::Text(env.knowledge.render())),
                        "feedback" => inputs.extend(env.feedback.clone().map(Content::Text)),
                        other => inputs.push(outputs[other].content()),
                    }
                }
                let input = ToolInput { data_source: env.data_source.clone(), inputs };
                match rt.tools.call(tool, &input) {
                    Ok(c) => Output::Content(c),
                    Err(ToolError::Timeout(d)) => {
                        return Err(KernelError::StepTimeout { step: step.id.clone(), after_ms: d.as_millis() as u64 })
                    }
                    Err(ToolError::Failed(message)) => {
                        return Err(KernelError::ToolFailure { step: step.id.clone(), message })
                    }
                }
            }
        };
        outputs.insert(step.id.clone(), out);
    }
    let description = if env.subtask.trim().is_empty() { spec.description.clone() } else { env.subtask.clone() };
    Ok(InformationUnit {
        data_source: env.data_source.clone(),
        role: spec.id.clone(),
        action: terminal.clone(),
        description,
        content: outputs[&terminal].content(),
        timestamp: rt.clock.now(),
        origin_cell: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fences_stripped() {
        assert_eq!(strip_fences("```sql\nSELECT 1\n```"), "SELECT 1");
        assert_eq!(strip_fences("Here:\n```python\nx = 1\n```\nDone"), "x = 1");
        assert_eq!(strip_fences("  SELECT 2 "), "SELECT 2");
    }
}
