//! Agent workflow engine: typed agents over LLM backends, DAG workflows with
//! concurrent execution, benchmark evaluation, and three workflow optimizers
//! (textual-gradient prompt refinement, instruction/demo search, and score-guided
//! topology search over operator graphs).
//!
//! The layers build on each other bottom-up:
//!
//! - [`config`] / [`logging`] / [`checkpoint`] — load and validate engine
//!   configuration, structured event logging, atomic persistent checkpoints.
//! - [`llm`] — provider-agnostic generation: an OpenAI-compatible HTTP client,
//!   a deterministic scripted mock for offline runs, usage/cost accounting.
//! - [`agent`] — agents as (LLM profile, memory buffer, typed actions), with
//!   prompt rendering and output parsing.
//! - [`workflow`] — directed acyclic task graphs: validation, dependency
//!   inference, LLM-planned generation, and a status-driven parallel executor.
//! - [`eval`] — benchmark loading, task metrics (F1, exact match, boxed-math
//!   equality, sandboxed pass@1), an LLM judge, and aggregation.
//! - [`evolve`] — the optimizers plus the reusable operator library.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod evolve;
mod jsonx;
pub mod llm;
pub mod logging;
pub mod workflow;

/// Value bag passed between actions and workflow nodes. Keys are input/output
/// field names; ordering is fixed so serialized forms are reproducible.
pub type ValueMap = std::collections::BTreeMap<String, serde_json::Value>;

/// Renders a value the way it appears when substituted into a prompt: strings
/// verbatim, everything else as compact JSON.
pub fn value_to_text(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub use agent::{ActionSpec, Agent, AgentManager, IOField, Message};
pub use config::{load_config, Config};
pub use eval::{Benchmark, Metric, MetricReport, TaskExample};
pub use evolve::{ExperienceLog, OptimizerConfig, PromptCandidate, WorkflowVariant};
pub use llm::{GenerationRequest, GenerationResponse, LLMConfig, LlmEnv, MockScript};
pub use workflow::{ExecutionReport, WorkFlowEdge, WorkFlowGraph, WorkFlowNode};
