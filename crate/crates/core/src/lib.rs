//! Engine for an LLM-assisted business-intelligence notebook.
//!
//! The crate is organized around the pieces a query touches on its way
//! through the system:
//!
//! - [`notebook`]: the multi-language notebook document and its edits.
//! - [`analysis`] and [`dag`]: per-cell variable extraction and the cell
//!   dependency DAG, maintained incrementally as cells change.
//! - [`context`]: minimum relevant context retrieval over the DAG.
//! - [`knowledge`]: knowledge generation from script history plus the
//!   data-profiling fallback.
//! - [`graph`]: the knowledge graph, its indexes, coarse/fine retrieval,
//!   query rewriting and the DSL that bridges queries to SQL and charts.
//! - [`agent`]: information units, the shared buffer, communication plans
//!   and the dispatcher that drives agents through Wait/Execution/Finish.
//! - [`gateway`]: the single choke point for completion and embedding calls.
//! - [`session`]: the ask / resolve loop that stitches everything together.
//!
//! Everything here is synchronous and free of I/O beyond what tools and
//! providers do explicitly, so the same code runs natively and in wasm.

pub mod agent;
pub mod analysis;
pub mod clock;
pub mod context;
pub mod dag;
pub mod gateway;
pub mod graph;
pub mod knowledge;
pub mod notebook;
#[cfg(not(target_arch = "wasm32"))]
pub mod replay;
pub mod session;
pub mod table;
pub mod text;

pub use clock::{Clock, StepClock, SystemClock};
pub use context::{retrieve_context, ContextBundle, QueryScope, ScopeLevel, TaskType};
pub use dag::CellDag;
pub use gateway::Gateway;
pub use notebook::{Cell, CellKind, Notebook};
pub use session::{Decision, Engine, Session, SessionError, Suggestion};
pub use table::Table;
