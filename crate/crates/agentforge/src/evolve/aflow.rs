//! Workflow-structure search. Each round samples a parent variant by softmax
//! over mean dev scores, asks the optimizer model for one structured graph
//! modification, validates and scores the mutated graph, and keeps the
//! best-scoring variant as incumbent. The full search state is checkpointed
//! after every round so an interrupted run resumes exactly where it stopped.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{render_prompt, ActionSpec, IOField, OperatorKind, ParseMode};
use crate::checkpoint::{
    canonical_string, load_checkpoint, save_checkpoint, CheckpointKind, CheckpointRecord,
};
use crate::eval::{Benchmark, EvalTarget, Metric, Split};
use crate::jsonx;
use crate::llm::{GenerationRequest, LlmEnv};
use crate::workflow::{validate_graph, WorkFlowEdge, WorkFlowGraph, WorkFlowNode};
use crate::ValueMap;

use super::operators::OPERATOR_CATALOG;
use super::{
    compose_prompt, eval_options, excerpt, mean, rng_for, validation_scores, EvolveError,
    ExperienceLog, LlmRoles, OptimizationRound, OptimizerConfig, RunHooks, WorkflowVariant,
};

pub const DEFAULT_MODIFY_PROMPT: &str = include_str!("../data/aflow_modify_prompt.txt");

const MAX_STALL_ROUNDS: u32 = 5;

// === modifications ===

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModOp {
    AddNode,
    RemoveNode,
    RewireEdge,
    EditPrompt,
}

impl ModOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModOp::AddNode => "add_node",
            ModOp::RemoveNode => "remove_node",
            ModOp::RewireEdge => "rewire_edge",
            ModOp::EditPrompt => "edit_prompt",
        }
    }
}

/// One structured graph change proposed by the optimizer model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modification {
    pub op: ModOp,
    #[serde(default)]
    pub target: String,
    #[serde(default)]
    pub payload: Value,
}

/// Applies a modification to a copy of the parent graph. Any structural
/// problem, including a post-change validation failure, rejects the
/// modification with a reason instead of producing a variant.
pub fn apply_modification(
    parent: &WorkFlowGraph,
    modification: &Modification,
) -> Result<WorkFlowGraph, String> {
    let mut graph = parent.clone();
    let name = modification.target.trim().to_string();
    match modification.op {
        ModOp::AddNode => {
            if name.is_empty() {
                return Err("add_node needs a node name in target".into());
            }
            if graph.node(&name).is_some() {
                return Err(format!("node {name} already exists"));
            }
            let payload = &modification.payload;
            let kind: OperatorKind = match payload.get("operator") {
                Some(v) => serde_json::from_value(v.clone())
                    .map_err(|_| format!("unknown operator {v}"))?,
                None => return Err("add_node payload needs an operator".into()),
            };
            let inputs: Vec<String> = match payload.get("inputs") {
                Some(Value::Array(items)) => items
                    .iter()
                    .map(|v| v.as_str().map(str::to_string))
                    .collect::<Option<_>>()
                    .ok_or_else(|| "add_node inputs must be strings".to_string())?,
                None | Some(Value::Null) => Vec::new(),
                Some(_) => return Err("add_node inputs must be an array".into()),
            };
            let output = payload
                .get("output")
                .and_then(Value::as_str)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| "add_node payload needs an output name".to_string())?;
            let prompt = payload.get("prompt").and_then(Value::as_str).unwrap_or("");
            let spec = ActionSpec {
                name: name.clone(),
                description: format!("{} step", kind.as_str()),
                prompt_template: prompt.to_string(),
                inputs: inputs.iter().map(IOField::text).collect(),
                outputs: vec![IOField::text(output)],
                parse_mode: ParseMode::Str,
                operator: Some(kind),
            };
            graph.add_node(WorkFlowNode::from_action(&name, spec));
            let producers = parent.producers();
            for input in &inputs {
                if let Some(producer) = producers.get(input.as_str()) {
                    graph.add_edge(WorkFlowEdge::new(*producer, &name));
                }
            }
        }
        ModOp::RemoveNode => {
            if graph.node(&name).is_none() {
                return Err(format!("node {name} does not exist"));
            }
            if graph.nodes.len() == 1 {
                return Err("refusing to remove the only node".into());
            }
            graph.remove_node(&name);
        }
        ModOp::RewireEdge => {
            let payload = &modification.payload;
            let pair = |key: &str| -> Result<Option<(String, String)>, String> {
                match payload.get(key) {
                    None | Some(Value::Null) => Ok(None),
                    Some(Value::Array(items)) if items.len() == 2 => {
                        let endpoint = |v: &Value| {
                            v.as_str()
                                .map(str::to_string)
                                .ok_or_else(|| format!("{key} endpoints must be strings"))
                        };
                        Ok(Some((endpoint(&items[0])?, endpoint(&items[1])?)))
                    }
                    Some(_) => Err(format!("{key} must be a [source, target] pair")),
                }
            };
            let remove = pair("remove")?;
            let add = pair("add")?;
            if remove.is_none() && add.is_none() {
                return Err("rewire_edge needs a remove and/or add pair".into());
            }
            if let Some((source, target)) = remove {
                if !graph.remove_edge(&source, &target) {
                    return Err(format!("edge {source} -> {target} does not exist"));
                }
            }
            if let Some((source, target)) = add {
                if graph.node(&source).is_none() || graph.node(&target).is_none() {
                    return Err("added edge endpoints must be existing nodes".into());
                }
                if graph.has_edge(&source, &target) {
                    return Err(format!("edge {source} -> {target} already exists"));
                }
                graph.add_edge(WorkFlowEdge::new(source, target));
            }
        }
        ModOp::EditPrompt => {
            let node = graph.node(&name).ok_or_else(|| format!("node {name} does not exist"))?;
            let instruction = modification
                .payload
                .get("prompt")
                .and_then(Value::as_str)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| "edit_prompt payload needs a prompt".to_string())?;
            let inputs = node.input_names().into_iter().map(IOField::text).collect::<Vec<_>>();
            let composed = compose_prompt(instruction, &[], &inputs);
            let node = graph.node_mut(&name).expect("node was just looked up");
            if !node.set_primary_prompt(composed) {
                return Err(format!("node {name} has no inline prompt to edit"));
            }
        }
    }
    let violations = validate_graph(&graph);
    if violations.is_empty() {
        Ok(graph)
    } else {
        let reasons: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        Err(format!("graph rejected: {}", reasons.join("; ")))
    }
}

// === search ===

#[derive(Debug, Clone)]
pub struct AflowOutcome {
    pub best: WorkflowVariant,
    /// Mean of the incumbent's test-split evaluations.
    pub test_score: f64,
    pub log: ExperienceLog,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AflowState {
    seed: u64,
    next_round: u64,
    variants: Vec<WorkflowVariant>,
    incumbent: usize,
    stall: u32,
    log: ExperienceLog,
}

fn pick_parent(variants: &[WorkflowVariant], temperature: f64, rng: &mut impl Rng) -> usize {
    let top = variants.iter().map(|v| v.mean_val).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> =
        variants.iter().map(|v| ((v.mean_val - top) / temperature).exp()).collect();
    WeightedIndex::new(&weights).expect("the top variant always weighs 1").sample(rng)
}

fn modify_prompt(round: u64, parent: &WorkflowVariant, state: &AflowState) -> String {
    let scores = state
        .variants
        .iter()
        .map(|v| format!("{}: {:.4} ({})", v.id, v.mean_val, v.modification_note))
        .collect::<Vec<_>>()
        .join("\n");
    let recent = if state.log.rounds.is_empty() {
        "(none)".to_string()
    } else {
        let skip = state.log.rounds.len().saturating_sub(5);
        state.log.rounds[skip..]
            .iter()
            .map(|r| {
                let verdict = if r.accepted { "accepted" } else { "rejected" };
                format!("round {}: {} -> {:.4} {}", r.round, r.action, r.val_score, verdict)
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut slots = ValueMap::new();
    slots.insert("round".into(), Value::from(round));
    slots.insert("graph".into(), Value::String(canonical_string(&parent.graph)));
    slots.insert("scores".into(), Value::String(scores));
    slots.insert("log".into(), Value::String(recent));
    slots.insert("operators".into(), Value::String(OPERATOR_CATALOG.trim_end().to_string()));
    render_prompt(DEFAULT_MODIFY_PROMPT, &slots).expect("modify slots are bound")
}

fn rejected_round(round: u64, parent_id: &str, action: &str, reason: &str) -> OptimizationRound {
    OptimizationRound {
        round,
        candidate_id: parent_id.to_string(),
        action: action.to_string(),
        val_score: 0.0,
        accepted: false,
        feedback_excerpt: excerpt(reason, 160),
    }
}

fn save_state(hooks: &RunHooks<'_>, state: &AflowState) -> Result<(), EvolveError> {
    if let Some(dir) = &hooks.checkpoint_dir {
        let payload = serde_json::to_value(state).expect("search state serializes");
        save_checkpoint(&CheckpointRecord::new(CheckpointKind::OptimizerState, payload), dir)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn aflow_optimize(
    seed_graph: &WorkFlowGraph,
    benchmark: &Benchmark,
    metric: &Metric,
    cfg: &OptimizerConfig,
    env: &LlmEnv,
    roles: &LlmRoles,
    hooks: &RunHooks<'_>,
) -> Result<AflowOutcome, EvolveError> {
    cfg.validate().map_err(|(field, message)| EvolveError::Config { field, message })?;
    let dev = benchmark.split(Split::Dev);
    let test = benchmark.split(Split::Test);
    if dev.is_empty() {
        return Err(EvolveError::EmptyDataset("dev".into()));
    }
    if test.is_empty() {
        return Err(EvolveError::EmptyDataset("test".into()));
    }
    let options = eval_options(cfg, &roles.executor);

    let mut state = match &hooks.resume_from {
        Some(id) => {
            let dir = hooks.checkpoint_dir.as_deref().ok_or_else(|| EvolveError::Config {
                field: "checkpoint_dir".into(),
                message: "resuming needs the checkpoint directory".into(),
            })?;
            let record = load_checkpoint(id, dir)?;
            if record.kind != CheckpointKind::OptimizerState {
                return Err(EvolveError::Config {
                    field: "resume".into(),
                    message: format!("checkpoint {id} does not hold optimizer state"),
                });
            }
            serde_json::from_value::<AflowState>(record.payload).map_err(|e| {
                EvolveError::Config {
                    field: "resume".into(),
                    message: format!("checkpoint payload does not parse: {e}"),
                }
            })?
        }
        None => {
            let violations = validate_graph(seed_graph);
            if !violations.is_empty() {
                let reasons: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                return Err(EvolveError::SeedGraph(reasons.join("; ")));
            }
            let mut seed = WorkflowVariant::new("v0", seed_graph.clone(), None, "seed");
            let scores = validation_scores(
                EvalTarget::Workflow(&seed.graph),
                dev,
                metric,
                env,
                &options,
                cfg.validation_rounds,
            )?;
            seed.record_scores(&scores);
            let mut log = ExperienceLog::new();
            log.record_parent("v0", None);
            log.bump("variant_evaluations", cfg.validation_rounds);
            let state = AflowState {
                seed: cfg.seed,
                next_round: 1,
                variants: vec![seed],
                incumbent: 0,
                stall: 0,
                log,
            };
            save_state(hooks, &state)?;
            state
        }
    };

    for round in state.next_round..=cfg.max_rounds {
        if state.stall >= MAX_STALL_ROUNDS {
            break;
        }
        let mut rng = rng_for(state.seed, round);
        let parent_index = pick_parent(&state.variants, cfg.selection_temperature, &mut rng);
        let parent_id = state.variants[parent_index].id.clone();

        let prompt = modify_prompt(round, &state.variants[parent_index], &state);
        let reply = env.generate(&roles.optimizer, &GenerationRequest::user(&prompt))?;
        state.log.bump("modify_calls", 1);

        let parsed = jsonx::first_json_object(&reply.content)
            .and_then(|raw| serde_json::from_str::<Modification>(raw).ok());
        let (entry, variant) = match parsed {
            None => {
                let entry = rejected_round(
                    round,
                    &parent_id,
                    "modification unparseable",
                    "the reply held no modification object",
                );
                (entry, None)
            }
            Some(modification) => {
                let note = format!("{} {}", modification.op.as_str(), modification.target);
                match apply_modification(&state.variants[parent_index].graph, &modification) {
                    Err(reason) => (rejected_round(round, &parent_id, &note, &reason), None),
                    Ok(graph) => {
                        let id = format!("v{round}");
                        let mut variant =
                            WorkflowVariant::new(&id, graph, Some(parent_id.clone()), &note);
                        let scores = validation_scores(
                            EvalTarget::Workflow(&variant.graph),
                            dev,
                            metric,
                            env,
                            &options,
                            cfg.validation_rounds,
                        )?;
                        variant.record_scores(&scores);
                        state.log.bump("variant_evaluations", cfg.validation_rounds);
                        let accepted =
                            variant.mean_val >= state.variants[state.incumbent].mean_val;
                        let entry = OptimizationRound {
                            round,
                            candidate_id: id,
                            action: note,
                            val_score: variant.mean_val,
                            accepted,
                            feedback_excerpt: excerpt(&reply.content, 160),
                        };
                        (entry, Some(variant))
                    }
                }
            }
        };

        match variant {
            Some(variant) => {
                state.log.record_parent(variant.id.clone(), Some(parent_id));
                state.variants.push(variant);
                if entry.accepted {
                    state.incumbent = state.variants.len() - 1;
                    state.stall = 0;
                } else {
                    state.stall += 1;
                }
            }
            None => state.stall += 1,
        }
        state.log.record_round(entry.clone());
        if let Some(on_round) = hooks.on_round {
            on_round(&entry);
        }
        state.next_round = round + 1;
        save_state(hooks, &state)?;
    }

    let best = state.variants[state.incumbent].clone();
    let test_scores = validation_scores(
        EvalTarget::Workflow(&best.graph),
        test,
        metric,
        env,
        &options,
        cfg.eval_rounds,
    )?;
    state.log.bump("test_evaluations", cfg.eval_rounds);
    Ok(AflowOutcome { best, test_score: mean(&test_scores), log: state.log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::ActionSpec;
    use crate::checkpoint::list_checkpoints;
    use crate::eval::{BenchmarkName, Gold, TaskExample};
    use crate::llm::{MockRule, MockScript};
    use serde_json::json;
    use std::collections::BTreeMap;

    fn math_example(id: &str, problem: &str, gold: &str) -> TaskExample {
        let mut inputs = ValueMap::new();
        inputs.insert("problem".into(), json!(problem));
        TaskExample {
            id: id.into(),
            inputs,
            gold: Gold::Answer(gold.into()),
            metadata: ValueMap::new(),
        }
    }

    fn two_problem_benchmark() -> Benchmark {
        let examples =
            vec![math_example("p1", "P1", "7"), math_example("p2", "P2", "9")];
        let mut splits = BTreeMap::new();
        splits.insert(Split::Dev, examples.clone());
        splits.insert(Split::Test, examples);
        Benchmark {
            name: BenchmarkName::Custom,
            splits,
            default_metric: "math_equal".into(),
        }
    }

    fn solver_graph() -> WorkFlowGraph {
        let mut graph = WorkFlowGraph::new("solve each problem three ways");
        for (name, label, output) in [
            ("SolveA", "APPROACH_A", "cand_a"),
            ("SolveB", "APPROACH_B", "cand_b"),
            ("SolveC", "APPROACH_C", "cand_c"),
        ] {
            let template = format!("{label}: {{problem}}");
            graph.add_node(WorkFlowNode::from_action(
                name,
                ActionSpec::simple(name, &template, "problem", output),
            ));
        }
        graph
    }

    fn solver_rules() -> Vec<MockRule> {
        vec![
            MockRule::substring("APPROACH_A: P1", r"\boxed{7}"),
            MockRule::substring("APPROACH_B: P1", r"\boxed{7}"),
            MockRule::substring("APPROACH_C: P1", r"\boxed{1}"),
            MockRule::substring("APPROACH_A: P2", r"\boxed{3}"),
            MockRule::substring("APPROACH_B: P2", r"\boxed{9}"),
            MockRule::substring("APPROACH_C: P2", r"\boxed{9}"),
        ]
    }

    fn planted_env() -> LlmEnv {
        let mut rules = solver_rules();
        // The round-2 rewrite of SolveA keeps its original answers.
        rules.push(MockRule::substring("carefully.\n\nP1", r"\boxed{7}"));
        rules.push(MockRule::substring("carefully.\n\nP2", r"\boxed{3}"));
        // Scripted modifications: a rejected duplicate producer, a neutral
        // prompt edit, then the ensemble node that lifts dev to 1.0.
        rules.push(MockRule::substring(
            "Current round: 1",
            r#"{"op":"add_node","target":"Duplicate","payload":{"operator":"custom","inputs":["problem"],"output":"cand_a"}}"#,
        ));
        rules.push(MockRule::substring(
            "Current round: 2",
            r#"{"op":"edit_prompt","target":"SolveA","payload":{"prompt":"Solve the problem carefully."}}"#,
        ));
        rules.push(MockRule::substring(
            "Current round: 3",
            r#"{"op":"add_node","target":"Vote","payload":{"operator":"sc_ensemble","inputs":["cand_a","cand_b","cand_c"],"output":"best"}}"#,
        ));
        LlmEnv::mock_only(MockScript::new(rules))
    }

    fn run(cfg: &OptimizerConfig, hooks: &RunHooks<'_>) -> AflowOutcome {
        aflow_optimize(
            &solver_graph(),
            &two_problem_benchmark(),
            &Metric::MathEqual,
            cfg,
            &planted_env(),
            &LlmRoles::same("mock"),
            hooks,
        )
        .unwrap()
    }

    #[test]
    fn planted_search_finds_the_ensemble() {
        let cfg = OptimizerConfig { seed: 11, ..OptimizerConfig::default() };
        let outcome = run(&cfg, &RunHooks::default());

        assert_eq!(outcome.best.id, "v3");
        assert_eq!(outcome.best.mean_val, 1.0);
        assert_eq!(outcome.test_score, 1.0);
        assert!(outcome.best.graph.node("Vote").is_some());

        // Round 1 was rejected before any evaluation, rounds 2 and 3 were
        // scored, and five straight fallback rounds stopped the run early.
        assert_eq!(outcome.log.rounds.len(), 8);
        let first = &outcome.log.rounds[0];
        assert!(!first.accepted);
        assert_eq!(first.val_score, 0.0);
        assert_eq!(outcome.log.counters["variant_evaluations"], 9);
        assert_eq!(outcome.log.counters["modify_calls"], 8);

        let accepted = outcome.log.accepted_scores();
        assert_eq!(accepted, vec![0.5, 1.0]);
        let chain = outcome.log.lineage_chain("v3").unwrap();
        assert_eq!(chain.last().map(String::as_str), Some("v0"));
    }

    #[test]
    fn interrupted_runs_resume_to_the_same_log() {
        let full_dir = tempfile::tempdir().unwrap();
        let full_hooks = RunHooks {
            checkpoint_dir: Some(full_dir.path().to_path_buf()),
            ..RunHooks::default()
        };
        let cfg = OptimizerConfig { seed: 11, ..OptimizerConfig::default() };
        let full = run(&cfg, &full_hooks);

        let part_dir = tempfile::tempdir().unwrap();
        let part_hooks = RunHooks {
            checkpoint_dir: Some(part_dir.path().to_path_buf()),
            ..RunHooks::default()
        };
        let short_cfg = OptimizerConfig { max_rounds: 4, ..cfg.clone() };
        run(&short_cfg, &part_hooks);

        let ids = list_checkpoints(part_dir.path()).unwrap();
        let last = ids.last().cloned().unwrap();
        let resume_hooks = RunHooks {
            checkpoint_dir: Some(part_dir.path().to_path_buf()),
            resume_from: Some(last),
            ..RunHooks::default()
        };
        let resumed = run(&cfg, &resume_hooks);

        assert_eq!(canonical_string(&resumed.log), canonical_string(&full.log));
        assert_eq!(resumed.best.id, full.best.id);
        assert_eq!(resumed.test_score, full.test_score);
    }

    #[test]
    fn tiny_temperature_all_but_pins_the_best_parent() {
        let graph = WorkFlowGraph::new("weights");
        let mut strong = WorkflowVariant::new("strong", graph.clone(), None, "seed");
        strong.record_scores(&[0.9]);
        let mut weak = WorkflowVariant::new("weak", graph, Some("strong".into()), "child");
        weak.record_scores(&[0.1]);
        let variants = vec![strong, weak];

        let picks = (0..100u64)
            .filter(|i| pick_parent(&variants, 0.001, &mut rng_for(42, *i)) == 0)
            .count();
        assert!(picks >= 99, "strong parent picked only {picks}/100 times");
    }

    #[test]
    fn removing_the_only_node_is_rejected() {
        let graph = {
            let mut g = WorkFlowGraph::new("single step");
            g.add_node(WorkFlowNode::from_action(
                "Solo",
                ActionSpec::simple("Solo", "SOLO: {problem}", "problem", "answer"),
            ));
            g
        };
        let env = LlmEnv::mock_only(MockScript::new(vec![
            MockRule::substring("SOLO: P1", "7"),
            MockRule::substring("SOLO: P2", "9"),
            MockRule::substring(
                "Current round: 1",
                r#"{"op":"remove_node","target":"Solo"}"#,
            ),
        ]));
        let cfg = OptimizerConfig { max_rounds: 1, ..OptimizerConfig::default() };
        let outcome = aflow_optimize(
            &graph,
            &two_problem_benchmark(),
            &Metric::MathEqual,
            &cfg,
            &env,
            &LlmRoles::same("mock"),
            &RunHooks::default(),
        )
        .unwrap();
        assert_eq!(outcome.best.id, "v0");
        assert_eq!(outcome.log.rounds.len(), 1);
        assert!(!outcome.log.rounds[0].accepted);
        assert!(outcome.log.rounds[0].feedback_excerpt.contains("only node"));
    }

    #[test]
    fn valid_edge_additions_take_effect() {
        let graph = {
            let mut g = WorkFlowGraph::new("two independent steps");
            g.add_node(WorkFlowNode::from_action(
                "First",
                ActionSpec::simple("First", "FIRST: {problem}", "problem", "draft"),
            ));
            g.add_node(WorkFlowNode::from_action(
                "Second",
                ActionSpec::simple("Second", "SECOND: {problem}", "problem", "final"),
            ));
            g
        };
        let env = LlmEnv::mock_only(MockScript::new(vec![MockRule::substring(
            "Current round: 1",
            r#"{"op":"rewire_edge","target":"","payload":{"add":["First","Second"]}}"#,
        )]));
        let cfg = OptimizerConfig { max_rounds: 1, ..OptimizerConfig::default() };
        let outcome = aflow_optimize(
            &graph,
            &two_problem_benchmark(),
            &Metric::MathEqual,
            &cfg,
            &env,
            &LlmRoles::same("mock"),
            &RunHooks::default(),
        )
        .unwrap();
        assert_eq!(outcome.best.id, "v1");
        assert!(outcome.best.graph.has_edge("First", "Second"));
    }

    #[test]
    fn unparseable_rounds_keep_the_seed() {
        let env = LlmEnv::mock_only(MockScript::new(solver_rules()));
        let cfg = OptimizerConfig { max_rounds: 3, ..OptimizerConfig::default() };
        let outcome = aflow_optimize(
            &solver_graph(),
            &two_problem_benchmark(),
            &Metric::MathEqual,
            &cfg,
            &env,
            &LlmRoles::same("mock"),
            &RunHooks::default(),
        )
        .unwrap();
        assert_eq!(outcome.best.id, "v0");
        assert_eq!(outcome.log.rounds.len(), 3);
        assert!(outcome.log.rounds.iter().all(|r| !r.accepted));
        assert_eq!(outcome.log.counters["modify_calls"], 3);
        assert_eq!(outcome.log.counters["variant_evaluations"], 3);
    }

    #[test]
    fn missing_splits_are_rejected() {
        let mut benchmark = two_problem_benchmark();
        benchmark.splits.remove(&Split::Test);
        let err = aflow_optimize(
            &solver_graph(),
            &benchmark,
            &Metric::MathEqual,
            &OptimizerConfig::default(),
            &planted_env(),
            &LlmRoles::same("mock"),
            &RunHooks::default(),
        )
        .unwrap_err();
        assert!(matches!(err, EvolveError::EmptyDataset(ref name) if name == "test"));
    }

    #[test]
    fn broken_seed_graphs_are_rejected() {
        let mut graph = solver_graph();
        graph.add_node(WorkFlowNode::from_action(
            "SolveD",
            ActionSpec::simple("SolveD", "APPROACH_D: {problem}", "problem", "cand_a"),
        ));
        let err = aflow_optimize(
            &graph,
            &two_problem_benchmark(),
            &Metric::MathEqual,
            &OptimizerConfig::default(),
            &planted_env(),
            &LlmRoles::same("mock"),
            &RunHooks::default(),
        )
        .unwrap_err();
        assert!(matches!(err, EvolveError::SeedGraph(_)));
    }
}
