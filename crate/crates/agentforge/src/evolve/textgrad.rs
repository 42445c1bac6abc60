//! Textual-gradient prompt tuning. Each round runs the current program on a
//! train minibatch, has a critic explain the failures, distills the critique
//! into one improvement directive, and lets an updater rewrite the
//! instruction. Rewrites are kept greedily by dev score, ties favoring the
//! newer candidate; five consecutive rejections end the run early.

use serde_json::Value;

use crate::agent::render_prompt;
use crate::eval::{EvalTarget, Metric, TaskExample};
use crate::llm::{GenerationRequest, LlmEnv};
use crate::workflow::WorkFlowGraph;
use crate::{value_to_text, ValueMap};

use super::{
    checkpoint_log, compose_action, eval_options, excerpt, forward_score, rewritable_nodes,
    rewrite_node_prompt, rng_for, validation_mean, EvolveError, ExperienceLog, LlmRoles,
    OptimizationRound, OptimizeTarget, OptimizerConfig, PromptCandidate, RunHooks,
};

pub const DEFAULT_CRITIC_PROMPT: &str = include_str!("../data/critic_prompt.txt");
pub const DEFAULT_GRADIENT_PROMPT: &str = include_str!("../data/gradient_prompt.txt");
pub const DEFAULT_UPDATER_PROMPT: &str = include_str!("../data/updater_prompt.txt");

const MAX_CONSECUTIVE_REJECTIONS: u32 = 5;

#[derive(Debug, Clone)]
pub struct TextGradOutcome {
    pub best: PromptCandidate,
    /// For workflow targets, the graph with every accepted rewrite applied.
    pub graph: Option<WorkFlowGraph>,
    pub log: ExperienceLog,
}

/// The current program under optimization. Action targets carry the base
/// spec plus the instruction being tuned; workflow targets rewrite their
/// nodes' prompts in place, one node per round.
enum Carrier {
    Action { base: crate::agent::ActionSpec, instruction: String, composed: crate::agent::ActionSpec },
    Workflow { graph: WorkFlowGraph, nodes: Vec<String> },
}

impl Carrier {
    fn seed(target: OptimizeTarget<'_>) -> Result<Carrier, EvolveError> {
        match target {
            OptimizeTarget::Action(base) => {
                let instruction = base.prompt_template.clone();
                let composed = compose_action(base, &instruction, &[]);
                Ok(Carrier::Action { base: base.clone(), instruction, composed })
            }
            OptimizeTarget::Workflow(graph) => {
                let nodes = rewritable_nodes(graph);
                if nodes.is_empty() {
                    return Err(EvolveError::Config {
                        field: "target".into(),
                        message: "workflow has no rewritable node prompts".into(),
                    });
                }
                Ok(Carrier::Workflow { graph: graph.clone(), nodes })
            }
        }
    }

    fn eval_target(&self) -> EvalTarget<'_> {
        match self {
            Carrier::Action { composed, .. } => EvalTarget::Action(composed),
            Carrier::Workflow { graph, .. } => EvalTarget::Workflow(graph),
        }
    }

    fn seed_instruction(&self) -> String {
        match self {
            Carrier::Action { instruction, .. } => instruction.clone(),
            Carrier::Workflow { graph, nodes } => graph
                .node(&nodes[0])
                .and_then(|n| n.primary_prompt())
                .unwrap_or("")
                .to_string(),
        }
    }

    /// The instruction slot this round works on; workflow targets rotate
    /// round-robin over their rewritable nodes.
    fn slot(&self, round: u64) -> (String, Option<String>) {
        match self {
            Carrier::Action { instruction, .. } => (instruction.clone(), None),
            Carrier::Workflow { graph, nodes } => {
                let node = nodes[((round - 1) % nodes.len() as u64) as usize].clone();
                let instruction = graph
                    .node(&node)
                    .and_then(|n| n.primary_prompt())
                    .unwrap_or("")
                    .to_string();
                (instruction, Some(node))
            }
        }
    }

    fn with_rewrite(&self, node: Option<&str>, instruction: &str) -> Carrier {
        match self {
            Carrier::Action { base, .. } => Carrier::Action {
                base: base.clone(),
                instruction: instruction.to_string(),
                composed: compose_action(base, instruction, &[]),
            },
            Carrier::Workflow { graph, nodes } => {
                let name = node.expect("workflow rewrites name a node");
                Carrier::Workflow {
                    graph: rewrite_node_prompt(graph, name, instruction, &[]),
                    nodes: nodes.clone(),
                }
            }
        }
    }

    fn into_graph(self) -> Option<WorkFlowGraph> {
        match self {
            Carrier::Action { .. } => None,
            Carrier::Workflow { graph, .. } => Some(graph),
        }
    }
}

fn minibatch<'t>(
    train: &'t [TaskExample],
    size: usize,
    seed: u64,
    round: u64,
) -> Vec<&'t TaskExample> {
    if size >= train.len() {
        return train.iter().collect();
    }
    let mut rng = rng_for(seed, round);
    rand::seq::index::sample(&mut rng, train.len(), size)
        .iter()
        .map(|i| &train[i])
        .collect()
}

fn cases_text(cases: &[(ValueMap, String, String, f64)]) -> String {
    let mut out = String::new();
    for (i, (inputs, output, gold, score)) in cases.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!("Case {} (score {score:.2}):\n", i + 1));
        for (name, value) in inputs {
            out.push_str(&format!("{name}: {}\n", value_to_text(value)));
        }
        out.push_str(&format!("model output: {output}\nexpected: {gold}"));
    }
    out
}

fn ask(env: &LlmEnv, profile: &str, prompt: &str) -> Result<String, EvolveError> {
    Ok(env.generate(profile, &GenerationRequest::user(prompt))?.content)
}

fn one_slot(name: &str, value: &str) -> ValueMap {
    let mut slots = ValueMap::new();
    slots.insert(name.to_string(), Value::String(value.to_string()));
    slots
}

pub fn textgrad_optimize(
    target: OptimizeTarget<'_>,
    train: &[TaskExample],
    dev: &[TaskExample],
    metric: &Metric,
    cfg: &OptimizerConfig,
    env: &LlmEnv,
    roles: &LlmRoles,
    hooks: &RunHooks<'_>,
) -> Result<TextGradOutcome, EvolveError> {
    cfg.validate().map_err(|(field, message)| EvolveError::Config { field, message })?;
    if hooks.resume_from.is_some() {
        return Err(EvolveError::Config {
            field: "resume".into(),
            message: "resume is supported for workflow (aflow) runs only".into(),
        });
    }
    if train.is_empty() {
        return Err(EvolveError::EmptyDataset("train".into()));
    }
    if dev.is_empty() {
        return Err(EvolveError::EmptyDataset("dev".into()));
    }

    let mut carrier = Carrier::seed(target)?;
    let mut best = PromptCandidate::seed(carrier.seed_instruction());
    let mut log = ExperienceLog::new();
    log.record_parent(best.id.clone(), None);

    if cfg.max_rounds == 0 {
        return Ok(TextGradOutcome { best, graph: carrier.into_graph(), log });
    }

    let options = eval_options(cfg, &roles.executor);
    let mut best_score =
        validation_mean(carrier.eval_target(), dev, metric, env, &options, cfg.validation_rounds)?;
    best.score = Some(best_score);
    log.bump("dev_evaluations", cfg.validation_rounds);

    let mut rejections = 0u32;
    for round in 1..=cfg.max_rounds {
        let (instruction, node) = carrier.slot(round);

        let picks = minibatch(train, cfg.minibatch_size, cfg.seed, round);
        let mut cases = Vec::with_capacity(picks.len());
        for example in picks {
            let (output, score) =
                forward_score(carrier.eval_target(), example, metric, env, &options)?;
            cases.push((example.inputs.clone(), output, example.gold.answer_text(), score));
        }
        log.bump("forward_cases", cases.len() as u64);

        let mut slots = one_slot("instruction", &instruction);
        slots.insert("cases".into(), Value::String(cases_text(&cases)));
        let critic_prompt =
            render_prompt(DEFAULT_CRITIC_PROMPT, &slots).expect("critic slots are bound");
        let analysis = ask(env, &roles.optimizer, &critic_prompt)?;

        let slots = one_slot("analysis", &analysis);
        let gradient_prompt =
            render_prompt(DEFAULT_GRADIENT_PROMPT, &slots).expect("gradient slots are bound");
        let directive = ask(env, &roles.optimizer, &gradient_prompt)?;

        let mut slots = one_slot("instruction", &instruction);
        slots.insert("directive".into(), Value::String(directive.clone()));
        let updater_prompt =
            render_prompt(DEFAULT_UPDATER_PROMPT, &slots).expect("updater slots are bound");
        let rewritten = ask(env, &roles.optimizer, &updater_prompt)?.trim().to_string();
        log.bump("optimizer_calls", 3);

        let candidate = carrier.with_rewrite(node.as_deref(), &rewritten);
        let val_score = validation_mean(
            candidate.eval_target(),
            dev,
            metric,
            env,
            &options,
            cfg.validation_rounds,
        )?;
        log.bump("dev_evaluations", cfg.validation_rounds);

        let id = match &node {
            Some(name) => format!("r{round}-{name}"),
            None => format!("r{round}"),
        };
        let accepted = val_score >= best_score;
        log.record_parent(id.clone(), Some(best.id.clone()));
        let entry = OptimizationRound {
            round,
            candidate_id: id.clone(),
            action: match &node {
                Some(name) => format!("rewrite prompt of node {name}"),
                None => "rewrite instruction".to_string(),
            },
            val_score,
            accepted,
            feedback_excerpt: excerpt(&directive, 160),
        };
        log.record_round(entry.clone());
        if let Some(on_round) = hooks.on_round {
            on_round(&entry);
        }

        if accepted {
            best = PromptCandidate {
                id,
                instruction: rewritten,
                demos: Vec::new(),
                score: Some(val_score),
                parent_id: Some(best.id.clone()),
                round,
            };
            best_score = val_score;
            carrier = candidate;
            rejections = 0;
        } else {
            rejections += 1;
        }
        checkpoint_log(hooks, "textgrad", round, &log)?;
        if rejections >= MAX_CONSECUTIVE_REJECTIONS {
            break;
        }
    }

    Ok(TextGradOutcome { best, graph: carrier.into_graph(), log })
}
