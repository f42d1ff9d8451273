//! Multi-agent kernel: information units, the shared buffer, communication
//! plans, agent workflows, tools and the dispatcher that moves agents
//! through Wait, Execution and Finish.

pub mod buffer;
pub mod dispatch;
pub mod plan;
pub mod spec;
pub mod tools;
pub mod unit;
pub mod workflow;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gateway::GatewayError;

pub use buffer::{BufferConfig, BufferError, PutReceipt, SharedBuffer, Snapshot, SweepPolicy};
pub use dispatch::{dispatch, DispatchConfig, DispatchOutcome, FinalAnswer, Trace, TraceEvent, TraceEventKind};
pub use plan::{parse_plan, plan, selective_retrieve, CommPlan, PlanNode, Transition, PLAN_SCHEMA, PLAN_SCHEMA_ID};
pub use spec::{AgentRegistry, AgentSpec, Payload, RenderTarget, Step, StepKind};
pub use tools::{ChartRenderer, SqlExecutor, Tool, ToolError, ToolInput, ToolKind, ToolRegistry};
#[cfg(not(target_arch = "wasm32"))]
pub use tools::CodeSandbox;
pub use unit::{Content, InformationUnit, UnitKey};
pub use workflow::{run_agent_workflow, Runtime, TaskEnvelope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Capability {
    #[serde(rename = "NL2SQL")]
    Nl2Sql,
    #[serde(rename = "NL2DSCode")]
    Nl2DsCode,
    #[serde(rename = "NL2VIS")]
    Nl2Vis,
    AnomalyDetection,
    CausalAnalysis,
    Forecasting,
    Insight,
}

impl Capability {
    pub const ALL: [Capability; 7] = [
        Capability::Nl2Sql,
        Capability::Nl2DsCode,
        Capability::Nl2Vis,
        Capability::AnomalyDetection,
        Capability::CausalAnalysis,
        Capability::Forecasting,
        Capability::Insight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Nl2Sql => "NL2SQL",
            Capability::Nl2DsCode => "NL2DSCode",
            Capability::Nl2Vis => "NL2VIS",
            Capability::AnomalyDetection => "AnomalyDetection",
            Capability::CausalAnalysis => "CausalAnalysis",
            Capability::Forecasting => "Forecasting",
            Capability::Insight => "Insight",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Capability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Capability::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown capability `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentState {
    Wait,
    Execution,
    Finish,
}

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("no agents registered")]
    NoAgents,
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("no registered agent has capability {0}")]
    NoCapableAgent(String),
    #[error("invalid model output: {0}")]
    InvalidModelOutput(String),
    #[error("agent `{agent}` is invalid: {message}")]
    InvalidSpec { agent: String, message: String },
    #[error("step `{step}` timed out after {after_ms} ms")]
    StepTimeout { step: String, after_ms: u64 },
    #[error("tool step `{step}` failed: {message}")]
    ToolFailure { step: String, message: String },
    #[error("agent `{agent}` exhausted its call budget")]
    BudgetExhausted { agent: String, trace: Box<Trace> },
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}
