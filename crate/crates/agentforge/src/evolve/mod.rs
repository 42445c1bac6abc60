//! Self-improvement layer: three optimizers over agents and workflows, the
//! operator library they share, and the bookkeeping types (candidates,
//! variants, round records, experience log) their runs produce.
//!
//! All three optimizers draw randomness through [`rng_for`], which derives a
//! fresh stream from the run seed and a salt (usually the round number).
//! Resumed runs therefore replay the exact minibatch draws and parent picks
//! of an uninterrupted run.

pub mod aflow;
pub mod mipro;
pub mod operators;
pub mod textgrad;

pub use aflow::{aflow_optimize, AflowOutcome, ModOp, Modification};
pub use mipro::{mipro_optimize, MiproOutcome};
pub use textgrad::{textgrad_optimize, TextGradOutcome};

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{placeholders, ActionSpec, IOField};
use crate::checkpoint::CheckpointError;
use crate::eval::{
    evaluate, Benchmark, BenchmarkName, EvalError, EvalTarget, EvaluateOptions, Metric, Split,
    TaskExample,
};
use crate::llm::{LlmEnv, LlmError};
use crate::workflow::WorkFlowGraph;
use crate::{value_to_text, ValueMap};

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("optimizer config invalid: {field}: {message}")]
    Config { field: String, message: String },
    #[error("{0} split has no examples")]
    EmptyDataset(String),
    #[error("proposal reply had no parseable instruction array after a re-prompt")]
    ProposalUnparseable,
    #[error("seed graph invalid: {0}")]
    SeedGraph(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// What an agent-level optimizer tunes: a lone action's prompt, or the
/// prompts of a workflow's nodes with the whole workflow as the scored
/// program.
#[derive(Debug, Clone, Copy)]
pub enum OptimizeTarget<'a> {
    Action(&'a ActionSpec),
    Workflow(&'a WorkFlowGraph),
}

// === optimizer selection and budget knobs ===

/// Which optimization algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Textgrad,
    Mipro,
    Aflow,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Textgrad => "textgrad",
            Algorithm::Mipro => "mipro",
            Algorithm::Aflow => "aflow",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "textgrad" => Ok(Algorithm::Textgrad),
            "mipro" => Ok(Algorithm::Mipro),
            "aflow" => Ok(Algorithm::Aflow),
            other => Err(format!("unknown algorithm {other:?} (expected textgrad, mipro, or aflow)")),
        }
    }
}

/// Budget and sampling knobs shared by every optimizer. `max_rounds` may be
/// zero (a no-op run returning the seed); the per-round counts must be ≥ 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u64,
    #[serde(default = "default_validation_rounds")]
    pub validation_rounds: u64,
    #[serde(default = "default_eval_rounds")]
    pub eval_rounds: u64,
    #[serde(default = "default_minibatch_size")]
    pub minibatch_size: usize,
    #[serde(default = "default_candidate_count")]
    pub candidate_count: usize,
    #[serde(default = "default_demo_count")]
    pub demo_count: usize,
    /// Softmax temperature for score-guided parent selection.
    #[serde(default = "default_selection_temperature")]
    pub selection_temperature: f64,
    #[serde(default)]
    pub seed: u64,
    /// Cap on dev examples used per scoring pass (full dev when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_limit: Option<usize>,
    /// Profile name used to run the workflow/agent under optimization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executor_profile: Option<String>,
    /// Profile name used for critic/proposer/mutation generations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer_profile: Option<String>,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Textgrad
}
fn default_max_rounds() -> u64 {
    20
}
fn default_validation_rounds() -> u64 {
    3
}
fn default_eval_rounds() -> u64 {
    3
}
fn default_minibatch_size() -> usize {
    4
}
fn default_candidate_count() -> usize {
    8
}
fn default_demo_count() -> usize {
    4
}
fn default_selection_temperature() -> f64 {
    0.2
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: default_algorithm(),
            max_rounds: default_max_rounds(),
            validation_rounds: default_validation_rounds(),
            eval_rounds: default_eval_rounds(),
            minibatch_size: default_minibatch_size(),
            candidate_count: default_candidate_count(),
            demo_count: default_demo_count(),
            selection_temperature: default_selection_temperature(),
            seed: 0,
            sample_limit: None,
            executor_profile: None,
            optimizer_profile: None,
        }
    }
}

impl OptimizerConfig {
    /// Checks the numeric invariants; returns the offending field name and a
    /// message on failure.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let counts: [(&str, u64); 4] = [
            ("validation_rounds", self.validation_rounds),
            ("eval_rounds", self.eval_rounds),
            ("minibatch_size", self.minibatch_size as u64),
            ("demo_count", self.demo_count as u64),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err((format!("optimizer.{name}"), "must be at least 1".into()));
            }
        }
        if self.candidate_count == 0 {
            return Err(("optimizer.candidate_count".into(), "must be at least 1".into()));
        }
        if !(self.selection_temperature > 0.0) {
            return Err((
                "optimizer.selection_temperature".into(),
                "must be greater than 0".into(),
            ));
        }
        if let Some(0) = self.sample_limit {
            return Err(("optimizer.sample_limit".into(), "must be at least 1 when set".into()));
        }
        Ok(())
    }
}

/// The two LLM roles an optimizer run uses: `executor` runs the thing being
/// optimized, `optimizer` produces critiques, proposals, and mutations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmRoles {
    pub executor: String,
    pub optimizer: String,
}

impl LlmRoles {
    pub fn same(profile: impl Into<String>) -> Self {
        let p = profile.into();
        LlmRoles { executor: p.clone(), optimizer: p }
    }
}

// === candidates and run records ===

/// One bootstrapped few-shot demonstration: task inputs plus the gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub inputs: ValueMap,
    pub gold: String,
}

/// A prompt under optimization: the instruction text plus its in-context
/// demo set, with lineage back to the candidate it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub id: String,
    pub instruction: String,
    #[serde(default)]
    pub demos: Vec<Demo>,
    /// Mean dev score; present once the candidate has been evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    pub round: u64,
}

impl PromptCandidate {
    pub fn seed(instruction: impl Into<String>) -> Self {
        PromptCandidate {
            id: "seed".into(),
            instruction: instruction.into(),
            demos: Vec::new(),
            score: None,
            parent_id: None,
            round: 0,
        }
    }
}

/// What happened in one optimizer round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRound {
    pub round: u64,
    pub candidate_id: String,
    /// Human-readable description of the change that was attempted.
    pub action: String,
    pub val_score: f64,
    pub accepted: bool,
    #[serde(default)]
    pub feedback_excerpt: String,
}

/// Append-only record of an optimizer run: the per-round history, the
/// candidate lineage (child id → parent id, `None` for the seed), and
/// monotonic counters such as the number of candidate evaluations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperienceLog {
    pub rounds: Vec<OptimizationRound>,
    pub lineage: BTreeMap<String, Option<String>>,
    #[serde(default)]
    pub counters: BTreeMap<String, u64>,
}

impl ExperienceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_round(&mut self, round: OptimizationRound) {
        self.rounds.push(round);
    }

    pub fn record_parent(&mut self, child: impl Into<String>, parent: Option<String>) {
        self.lineage.insert(child.into(), parent);
    }

    pub fn bump(&mut self, counter: &str, by: u64) {
        *self.counters.entry(counter.to_string()).or_insert(0) += by;
    }

    /// Scores of accepted rounds in order; useful for monotonicity checks.
    pub fn accepted_scores(&self) -> Vec<f64> {
        self.rounds.iter().filter(|r| r.accepted).map(|r| r.val_score).collect()
    }

    /// Follows parent links from `id` to the root. Returns `None` if a link
    /// is missing, which would mean the log was tampered with.
    pub fn lineage_chain(&self, id: &str) -> Option<Vec<String>> {
        let mut chain = vec![id.to_string()];
        let mut cursor = id.to_string();
        while let Some(parent) = self.lineage.get(&cursor)? {
            chain.push(parent.clone());
            cursor = parent.clone();
            if chain.len() > self.lineage.len() + 1 {
                return None;
            }
        }
        Some(chain)
    }
}

// === seeded randomness ===

/// Derives a deterministic RNG from the run seed and a salt (typically the
/// round number), so each round's draws are independent of how many draws
/// earlier rounds consumed. This is what makes checkpoint resume replay the
/// same decisions as an uninterrupted run.
pub fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

// === workflow variants ===

/// One candidate graph+prompt configuration in the workflow search, with
/// lineage and its validation scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowVariant {
    pub id: String,
    pub graph: WorkFlowGraph,
    /// Node name → its primary prompt, kept in step with `graph`.
    pub prompt_set: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default)]
    pub modification_note: String,
    #[serde(default)]
    pub val_scores: Vec<f64>,
    #[serde(default)]
    pub mean_val: f64,
}

impl WorkflowVariant {
    pub fn new(
        id: impl Into<String>,
        graph: WorkFlowGraph,
        parent_id: Option<String>,
        modification_note: impl Into<String>,
    ) -> Self {
        let prompt_set = prompt_set_of(&graph);
        WorkflowVariant {
            id: id.into(),
            graph,
            prompt_set,
            parent_id,
            modification_note: modification_note.into(),
            val_scores: Vec::new(),
            mean_val: 0.0,
        }
    }

    /// Appends validation scores and keeps `mean_val` consistent with them.
    pub fn record_scores(&mut self, scores: &[f64]) {
        self.val_scores.extend_from_slice(scores);
        self.mean_val = mean(&self.val_scores);
    }
}

/// The per-node primary prompts of a graph; nodes that delegate to named
/// agents have no prompt of their own and map to an empty string.
pub fn prompt_set_of(graph: &WorkFlowGraph) -> BTreeMap<String, String> {
    graph
        .nodes
        .iter()
        .map(|n| (n.name.clone(), n.primary_prompt().unwrap_or("").to_string()))
        .collect()
}

// === run hooks ===

/// Observation and persistence hooks for an optimizer run. `on_round` fires
/// after every recorded round, including rejected ones; a checkpoint is
/// written per round when a directory is given; `resume_from` restarts an
/// interrupted workflow search from a saved checkpoint id.
#[derive(Default)]
pub struct RunHooks<'a> {
    pub on_round: Option<&'a (dyn Fn(&OptimizationRound) + Sync)>,
    pub checkpoint_dir: Option<PathBuf>,
    pub resume_from: Option<String>,
}

// === prompt composition ===

/// Doubles braces so arbitrary text survives template rendering verbatim.
pub fn escape_braces(text: &str) -> String {
    text.replace('{', "{{").replace('}', "}}")
}

/// Builds a runnable prompt template around an instruction under
/// optimization: the instruction itself, any few-shot demos (brace-escaped
/// so their content is never mistaken for slots), and delivery slots for
/// required inputs the instruction does not already reference.
pub fn compose_prompt(instruction: &str, demos: &[Demo], inputs: &[IOField]) -> String {
    let mut out = instruction.trim_end().to_string();
    if !demos.is_empty() {
        out.push_str("\n\nWorked examples:");
        for demo in demos {
            out.push_str("\n\nExample:\n");
            for (name, value) in &demo.inputs {
                out.push_str(&format!("{name}: {}\n", escape_braces(&value_to_text(value))));
            }
            out.push_str(&format!("answer: {}", escape_braces(&demo.gold)));
        }
    }
    let referenced = placeholders(instruction);
    let missing: Vec<&IOField> = inputs
        .iter()
        .filter(|f| f.required && !referenced.contains(&f.name))
        .collect();
    match missing.as_slice() {
        [] => {}
        [only] => out.push_str(&format!("\n\n{{{}}}", only.name)),
        many => {
            out.push('\n');
            for field in many {
                out.push_str(&format!("\n{}: {{{}}}", field.name, field.name));
            }
        }
    }
    out
}

/// A copy of `base` with its template replaced by a composed candidate prompt.
pub fn compose_action(base: &ActionSpec, instruction: &str, demos: &[Demo]) -> ActionSpec {
    let mut spec = base.clone();
    spec.prompt_template = compose_prompt(instruction, demos, &base.inputs);
    spec
}

/// A copy of `graph` with one node's primary prompt replaced by a composed
/// candidate prompt. Nodes without an inline action are left unchanged.
pub fn rewrite_node_prompt(
    graph: &WorkFlowGraph,
    node: &str,
    instruction: &str,
    demos: &[Demo],
) -> WorkFlowGraph {
    let mut graph = graph.clone();
    let inputs = graph
        .node(node)
        .and_then(|n| match &n.executor {
            crate::workflow::NodeExecutor::ActionGraph(specs) => {
                specs.first().map(|s| s.inputs.clone())
            }
            _ => None,
        })
        .unwrap_or_default();
    let composed = compose_prompt(instruction, demos, &inputs);
    if let Some(n) = graph.node_mut(node) {
        n.set_primary_prompt(composed);
    }
    graph
}

/// Names of the nodes whose prompts an optimizer can rewrite, in graph order.
pub fn rewritable_nodes(graph: &WorkFlowGraph) -> Vec<String> {
    graph
        .nodes
        .iter()
        .filter(|n| n.primary_prompt().is_some())
        .map(|n| n.name.clone())
        .collect()
}

// === shared scoring plumbing ===

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// First `limit` characters of the trimmed text, marking truncation.
pub(crate) fn excerpt(text: &str, limit: usize) -> String {
    let trimmed = text.trim();
    match trimmed.char_indices().nth(limit) {
        Some((byte, _)) => format!("{}...", &trimmed[..byte]),
        None => trimmed.to_string(),
    }
}

/// Wraps loose examples as a dev-split benchmark so the evaluation driver
/// can score them.
pub(crate) fn adhoc_benchmark(examples: &[TaskExample], metric: &Metric) -> Benchmark {
    let mut splits = BTreeMap::new();
    splits.insert(Split::Dev, examples.to_vec());
    Benchmark {
        name: BenchmarkName::Custom,
        splits,
        default_metric: metric.name().to_string(),
    }
}

/// Scores the target on the examples once per validation round and returns
/// each round's aggregate.
pub(crate) fn validation_scores(
    target: EvalTarget<'_>,
    examples: &[TaskExample],
    metric: &Metric,
    env: &LlmEnv,
    options: &EvaluateOptions,
    rounds: u64,
) -> Result<Vec<f64>, EvolveError> {
    let benchmark = adhoc_benchmark(examples, metric);
    let mut aggregates = Vec::new();
    for _ in 0..rounds.max(1) {
        let report = evaluate(target, &benchmark, Split::Dev, metric, env, options)?;
        aggregates.push(report.aggregate);
    }
    Ok(aggregates)
}

pub(crate) fn validation_mean(
    target: EvalTarget<'_>,
    examples: &[TaskExample],
    metric: &Metric,
    env: &LlmEnv,
    options: &EvaluateOptions,
    rounds: u64,
) -> Result<f64, EvolveError> {
    Ok(mean(&validation_scores(target, examples, metric, env, options, rounds)?))
}

/// Runs the target on one example and scores the prediction. Per-example
/// failures come back as score 0, matching the evaluation driver; systemic
/// errors abort.
pub(crate) fn forward_score(
    target: EvalTarget<'_>,
    example: &TaskExample,
    metric: &Metric,
    env: &LlmEnv,
    options: &EvaluateOptions,
) -> Result<(String, f64), EvolveError> {
    match crate::eval::evaluate::run_target(target, example, env, options)? {
        Some(prediction) => {
            let score =
                crate::eval::score_prediction(metric, &prediction, example, env, options)?;
            Ok((prediction, score))
        }
        None => Ok(("(the run produced no output)".to_string(), 0.0)),
    }
}

pub(crate) fn eval_options(cfg: &OptimizerConfig, profile: &str) -> EvaluateOptions {
    EvaluateOptions { sample_limit: cfg.sample_limit, ..EvaluateOptions::new(profile) }
}

/// Persists the run log after a round when a checkpoint directory is set.
pub(crate) fn checkpoint_log(
    hooks: &RunHooks<'_>,
    algorithm: &str,
    round: u64,
    log: &ExperienceLog,
) -> Result<(), EvolveError> {
    if let Some(dir) = &hooks.checkpoint_dir {
        let payload = serde_json::json!({
            "algorithm": algorithm,
            "round": round,
            "log": log,
        });
        crate::checkpoint::save_checkpoint(
            &crate::checkpoint::CheckpointRecord::new(
                crate::checkpoint::CheckpointKind::OptimizerState,
                payload,
            ),
            dir,
        )?;
    }
    Ok(())
}
