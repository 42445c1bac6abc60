//! Instruction-and-demonstration search. Demos are bootstrapped from train
//! examples the seed program already answers correctly, an optimizer model
//! proposes alternative instructions, and every (instruction, demo-set) pair
//! races through cumulative successive halving on a seeded shuffle of dev
//! until one survivor is scored on the full split.

use rand::seq::SliceRandom;
use serde_json::Value;

use crate::agent::render_prompt;
use crate::eval::{EvalTarget, Metric, TaskExample};
use crate::jsonx;
use crate::llm::{GenerationRequest, LlmEnv};
use crate::workflow::WorkFlowGraph;
use crate::{value_to_text, ValueMap};

use super::{
    checkpoint_log, compose_action, eval_options, forward_score, mean, rewritable_nodes,
    rewrite_node_prompt, rng_for, Demo, EvolveError, ExperienceLog, LlmRoles, OptimizationRound,
    OptimizeTarget, OptimizerConfig, PromptCandidate, RunHooks,
};

pub const DEFAULT_PROPOSAL_PROMPT: &str = include_str!("../data/mipro_proposal_prompt.txt");

const REPROMPT_REMINDER: &str = "Reply with only the JSON array of instruction strings.";

#[derive(Debug, Clone)]
pub struct MiproOutcome {
    pub best: PromptCandidate,
    pub log: ExperienceLog,
}

/// An owned, runnable copy of the target with a candidate prompt installed.
enum Program {
    Action(crate::agent::ActionSpec),
    Workflow(WorkFlowGraph),
}

impl Program {
    fn target(&self) -> EvalTarget<'_> {
        match self {
            Program::Action(spec) => EvalTarget::Action(spec),
            Program::Workflow(graph) => EvalTarget::Workflow(graph),
        }
    }
}

fn compose_program(
    target: OptimizeTarget<'_>,
    node: Option<&str>,
    instruction: &str,
    demos: &[Demo],
) -> Program {
    match target {
        OptimizeTarget::Action(base) => Program::Action(compose_action(base, instruction, demos)),
        OptimizeTarget::Workflow(graph) => Program::Workflow(rewrite_node_prompt(
            graph,
            node.expect("workflow targets name a node"),
            instruction,
            demos,
        )),
    }
}

fn demos_text(demos: &[Demo]) -> String {
    if demos.is_empty() {
        return "(none)".into();
    }
    demos
        .iter()
        .enumerate()
        .map(|(i, demo)| {
            let mut block = format!("Example {}:\n", i + 1);
            for (name, value) in &demo.inputs {
                block.push_str(&format!("{name}: {}\n", value_to_text(value)));
            }
            block.push_str(&format!("answer: {}", demo.gold));
            block
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn parse_proposals(reply: &str) -> Option<Vec<String>> {
    let raw = jsonx::first_json_array(reply)?;
    let items: Vec<Value> = serde_json::from_str(raw).ok()?;
    let mut list = Vec::with_capacity(items.len());
    for item in items {
        match item {
            Value::String(s) if !s.trim().is_empty() => list.push(s),
            _ => return None,
        }
    }
    (!list.is_empty()).then_some(list)
}

#[allow(clippy::too_many_arguments)]
fn extend_scores(
    scores: &mut Vec<f64>,
    upto: usize,
    program: &Program,
    dev: &[TaskExample],
    order: &[usize],
    metric: &Metric,
    env: &LlmEnv,
    options: &crate::eval::EvaluateOptions,
    log: &mut ExperienceLog,
) -> Result<(), EvolveError> {
    while scores.len() < upto {
        let example = &dev[order[scores.len()]];
        let (_, score) = forward_score(program.target(), example, metric, env, options)?;
        scores.push(score);
        log.bump("candidate_evaluations", 1);
    }
    Ok(())
}

pub fn mipro_optimize(
    target: OptimizeTarget<'_>,
    train: &[TaskExample],
    dev: &[TaskExample],
    metric: &Metric,
    cfg: &OptimizerConfig,
    env: &LlmEnv,
    roles: &LlmRoles,
    hooks: &RunHooks<'_>,
) -> Result<MiproOutcome, EvolveError> {
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

    let node = match target {
        OptimizeTarget::Action(_) => None,
        OptimizeTarget::Workflow(graph) => match rewritable_nodes(graph).into_iter().next() {
            Some(first) => Some(first),
            None => {
                return Err(EvolveError::Config {
                    field: "target".into(),
                    message: "workflow has no rewritable node prompts".into(),
                })
            }
        },
    };
    let seed_instruction = match target {
        OptimizeTarget::Action(base) => base.prompt_template.clone(),
        OptimizeTarget::Workflow(graph) => graph
            .node(node.as_deref().unwrap_or_default())
            .and_then(|n| n.primary_prompt())
            .unwrap_or("")
            .to_string(),
    };

    let mut log = ExperienceLog::new();
    log.record_parent("seed", None);
    let options = eval_options(cfg, &roles.executor);

    // Demo bootstrap: keep train examples the seed program already solves.
    let seed_program = compose_program(target, node.as_deref(), &seed_instruction, &[]);
    let mut demos = Vec::new();
    for example in train {
        if demos.len() >= cfg.demo_count {
            break;
        }
        let (_, score) = forward_score(seed_program.target(), example, metric, env, &options)?;
        log.bump("bootstrap_runs", 1);
        if score >= 1.0 {
            demos.push(Demo { inputs: example.inputs.clone(), gold: example.gold.answer_text() });
        }
    }

    // Instruction proposals, with one re-prompt on a malformed reply.
    let mut slots = ValueMap::new();
    slots.insert("instruction".into(), Value::String(seed_instruction.clone()));
    slots.insert("demos".into(), Value::String(demos_text(&demos)));
    slots.insert("count".into(), Value::from(cfg.candidate_count as u64));
    let prompt =
        render_prompt(DEFAULT_PROPOSAL_PROMPT, &slots).expect("proposal slots are bound");
    let reply = env.generate(&roles.optimizer, &GenerationRequest::user(&prompt))?;
    log.bump("proposal_calls", 1);
    let mut proposals = match parse_proposals(&reply.content) {
        Some(list) => list,
        None => {
            let retry = format!("{prompt}\n\n{REPROMPT_REMINDER}");
            let reply = env.generate(&roles.optimizer, &GenerationRequest::user(&retry))?;
            log.bump("proposal_calls", 1);
            parse_proposals(&reply.content).ok_or(EvolveError::ProposalUnparseable)?
        }
    };
    proposals.truncate(cfg.candidate_count);

    // Candidate pool: each proposal bare and, when any demos were
    // bootstrapped, paired with them. A single-candidate budget keeps one
    // entry so the whole budget goes to the full-dev pass.
    let mut pool: Vec<PromptCandidate> = Vec::new();
    for (i, instruction) in proposals.iter().enumerate() {
        let with_demos = !demos.is_empty();
        if cfg.candidate_count == 1 {
            pool.push(PromptCandidate {
                id: if with_demos { format!("p{}+demos", i + 1) } else { format!("p{}", i + 1) },
                instruction: instruction.clone(),
                demos: if with_demos { demos.clone() } else { Vec::new() },
                score: None,
                parent_id: Some("seed".into()),
                round: 0,
            });
            continue;
        }
        pool.push(PromptCandidate {
            id: format!("p{}", i + 1),
            instruction: instruction.clone(),
            demos: Vec::new(),
            score: None,
            parent_id: Some("seed".into()),
            round: 0,
        });
        if with_demos {
            pool.push(PromptCandidate {
                id: format!("p{}+demos", i + 1),
                instruction: instruction.clone(),
                demos: demos.clone(),
                score: None,
                parent_id: Some("seed".into()),
                round: 0,
            });
        }
    }
    for candidate in &pool {
        log.record_parent(candidate.id.clone(), Some("seed".to_string()));
    }
    let programs: Vec<Program> = pool
        .iter()
        .map(|c| compose_program(target, node.as_deref(), &c.instruction, &c.demos))
        .collect();

    // Successive halving on a seeded shuffle of dev, scored cumulatively so
    // survivors reuse earlier examples' scores as the budget doubles.
    let mut order: Vec<usize> = (0..dev.len()).collect();
    order.shuffle(&mut rng_for(cfg.seed, 1));
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); pool.len()];
    let mut alive: Vec<usize> = (0..pool.len()).collect();
    let mut target_n = cfg.minibatch_size.min(dev.len());
    let mut stage = 0u64;
    let mut best_so_far = f64::NEG_INFINITY;

    while alive.len() > 1 {
        stage += 1;
        let before = alive.len();
        for &c in &alive {
            extend_scores(
                &mut scores[c], target_n, &programs[c], dev, &order, metric, env, &options,
                &mut log,
            )?;
        }
        alive.sort_by(|&a, &b| mean(&scores[b]).total_cmp(&mean(&scores[a])).then(a.cmp(&b)));
        let keep = (alive.len() + 1) / 2;
        alive.truncate(keep);
        let leader = alive[0];
        let val_score = mean(&scores[leader]);
        let accepted = val_score >= best_so_far;
        if accepted {
            best_so_far = val_score;
        }
        let entry = OptimizationRound {
            round: stage,
            candidate_id: pool[leader].id.clone(),
            action: format!("halved {before} to {keep} candidates on {target_n} examples"),
            val_score,
            accepted,
            feedback_excerpt: String::new(),
        };
        log.record_round(entry.clone());
        if let Some(on_round) = hooks.on_round {
            on_round(&entry);
        }
        checkpoint_log(hooks, "mipro", stage, &log)?;
        target_n = (target_n * 2).min(dev.len());
    }

    let winner = alive[0];
    extend_scores(
        &mut scores[winner], dev.len(), &programs[winner], dev, &order, metric, env, &options,
        &mut log,
    )?;
    let final_score = mean(&scores[winner]);
    stage += 1;
    let entry = OptimizationRound {
        round: stage,
        candidate_id: pool[winner].id.clone(),
        action: format!("survivor scored on all {} dev examples", dev.len()),
        val_score: final_score,
        accepted: final_score >= best_so_far,
        feedback_excerpt: String::new(),
    };
    log.record_round(entry.clone());
    if let Some(on_round) = hooks.on_round {
        on_round(&entry);
    }
    checkpoint_log(hooks, "mipro", stage, &log)?;

    let mut best = pool.swap_remove(winner);
    best.score = Some(final_score);
    Ok(MiproOutcome { best, log })
}
