//! The evaluation driver: run a workflow (or a single action) over a
//! benchmark split, score each example, and aggregate. Examples run on a
//! small worker pool; per-example failures score zero, systemic failures
//! abort the whole evaluation.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::judge::llm_judge;
use super::metrics::{exact_match, f1_score, math_equal};
use super::sandbox::pass_at_1;
use super::{Benchmark, EvalError, Gold, Split, TaskExample};
use crate::agent::{register_agents_from_workflow, run_spec, ActionSpec, AgentError};
use crate::evolve::operators::run_operator;
use crate::llm::LlmEnv;
use crate::workflow::{execute, ExecutionPolicy, WorkFlowGraph};
use crate::{value_to_text, ValueMap};

/// What gets run per example: a whole workflow graph, or one action spec on
/// its own ("evaluation at various abstraction levels").
#[derive(Debug, Clone, Copy)]
pub enum EvalTarget<'a> {
    Workflow(&'a WorkFlowGraph),
    Action(&'a ActionSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    F1,
    ExactMatch,
    MathEqual,
    PassAt1,
    Judge { criteria: String, profile: String },
}

pub const DEFAULT_JUDGE_CRITERIA: &str =
    "The answer must be correct, complete, and directly address the question.";

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::F1 => "f1",
            Metric::ExactMatch => "exact_match",
            Metric::MathEqual => "math_equal",
            Metric::PassAt1 => "pass_at_1",
            Metric::Judge { .. } => "judge",
        }
    }

    /// Resolves a metric name; "judge" gets the default criteria and scores
    /// with the evaluation profile unless overridden on the variant.
    pub fn parse(name: &str) -> Result<Metric, EvalError> {
        match name {
            "f1" => Ok(Metric::F1),
            "exact_match" => Ok(Metric::ExactMatch),
            "math_equal" => Ok(Metric::MathEqual),
            "pass_at_1" => Ok(Metric::PassAt1),
            "judge" => Ok(Metric::Judge {
                criteria: DEFAULT_JUDGE_CRITERIA.to_string(),
                profile: String::new(),
            }),
            other => Err(EvalError::UnknownMetric(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    /// LLM profile executing the target.
    pub profile: String,
    /// Evaluate at most this many examples from the split.
    pub sample_limit: Option<usize>,
    /// Examples scored concurrently.
    pub concurrency: usize,
    /// Wall-clock budget per sandboxed program.
    pub sandbox_timeout: f64,
}

impl EvaluateOptions {
    pub fn new(profile: impl Into<String>) -> Self {
        EvaluateOptions {
            profile: profile.into(),
            sample_limit: None,
            concurrency: 4,
            sandbox_timeout: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub n: usize,
    /// Mean of the per-example scores; 0.0 when n is 0.
    pub aggregate: f64,
    pub per_example: BTreeMap<String, f64>,
}

/// Runs `target` over the benchmark split and scores it with `metric`.
pub fn evaluate(
    target: EvalTarget<'_>,
    benchmark: &Benchmark,
    split: Split,
    metric: &Metric,
    env: &LlmEnv,
    options: &EvaluateOptions,
) -> Result<MetricReport, EvalError> {
    let all = benchmark.split(split);
    let limit = options.sample_limit.unwrap_or(all.len()).min(all.len());
    let examples = &all[..limit];
    if examples.is_empty() {
        log::warn!(
            target: "agentforge::eval",
            "split {split} of {} has no examples to evaluate",
            benchmark.name
        );
        return Ok(MetricReport {
            metric: metric.name().to_string(),
            n: 0,
            aggregate: 0.0,
            per_example: BTreeMap::new(),
        });
    }

    let next = AtomicUsize::new(0);
    let abort: Mutex<Option<EvalError>> = Mutex::new(None);
    let scores: Mutex<BTreeMap<String, f64>> = Mutex::new(BTreeMap::new());
    let workers = options.concurrency.max(1).min(examples.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.lock().unwrap().is_some() {
                    break;
                }
                let index = next.fetch_add(1, Ordering::Relaxed);
                let Some(example) = examples.get(index) else { break };
                match score_example(target, example, metric, env, options) {
                    Ok(score) => {
                        scores.lock().unwrap().insert(example.id.clone(), score);
                    }
                    Err(error) => {
                        abort.lock().unwrap().get_or_insert(error);
                        break;
                    }
                }
            });
        }
    });

    if let Some(error) = abort.into_inner().expect("no poisoned lock") {
        return Err(error);
    }
    let per_example = scores.into_inner().expect("no poisoned lock");
    let n = per_example.len();
    let aggregate = per_example.values().sum::<f64>() / n as f64;
    Ok(MetricReport { metric: metric.name().to_string(), n, aggregate, per_example })
}

fn score_example(
    target: EvalTarget<'_>,
    example: &TaskExample,
    metric: &Metric,
    env: &LlmEnv,
    options: &EvaluateOptions,
) -> Result<f64, EvalError> {
    let prediction = match run_target(target, example, env, options)? {
        Some(prediction) => prediction,
        None => return Ok(0.0),
    };
    score_prediction(metric, &prediction, example, env, options)
}

/// Ok(None) = this example failed and scores zero; Err = abort everything.
pub(crate) fn run_target(
    target: EvalTarget<'_>,
    example: &TaskExample,
    env: &LlmEnv,
    options: &EvaluateOptions,
) -> Result<Option<String>, EvalError> {
    match target {
        EvalTarget::Workflow(graph) => {
            let manager = register_agents_from_workflow(graph, &options.profile)?;
            let policy = ExecutionPolicy::default();
            let report = execute(graph, &manager, env, &example.inputs, &policy)?;
            if report.succeeded() {
                return Ok(Some(extract_prediction(&report.outputs)));
            }
            if let Some(failure) = report.failures.iter().find(|f| f.systemic) {
                return Err(EvalError::Workflow(crate::workflow::WorkflowError::Agent(
                    AgentError::InvalidSpec(failure.message.clone()),
                )));
            }
            log::warn!(
                target: "agentforge::eval",
                "example {} failed: {}",
                example.id,
                report
                    .failures
                    .first()
                    .map(|f| f.message.clone())
                    .unwrap_or_else(|| "workflow did not complete".into())
            );
            Ok(None)
        }
        EvalTarget::Action(spec) => {
            let result = if spec.operator.is_some() {
                run_operator(spec, &example.inputs, env, &options.profile)
            } else {
                run_spec(spec, &example.inputs, env, &options.profile)
            };
            match result {
                Ok(outcome) => Ok(Some(extract_prediction(&outcome.message.outputs))),
                Err(AgentError::Llm(e)) if e.is_systemic() => Err(EvalError::Llm(e)),
                Err(error) => {
                    log::warn!(
                        target: "agentforge::eval",
                        "example {} failed: {error}",
                        example.id
                    );
                    Ok(None)
                }
            }
        }
    }
}

/// Scores one prediction against the example's gold. Shared by the
/// evaluation driver and the optimizers' minibatch loops.
pub fn score_prediction(
    metric: &Metric,
    prediction: &str,
    example: &TaskExample,
    env: &LlmEnv,
    options: &EvaluateOptions,
) -> Result<f64, EvalError> {
    match metric {
        Metric::F1 => Ok(f1_score(prediction, &example.gold.answer_text())),
        Metric::ExactMatch => Ok(exact_match(prediction, &example.gold.answer_text())),
        Metric::MathEqual => Ok(math_equal(prediction, &example.gold.answer_text())),
        Metric::PassAt1 => match &example.gold {
            Gold::Tests(tests) => pass_at_1(prediction, tests, options.sandbox_timeout),
            Gold::Answer(_) => {
                log::warn!(
                    target: "agentforge::eval",
                    "example {} has no test suite; pass_at_1 scores it 0",
                    example.id
                );
                Ok(0.0)
            }
        },
        Metric::Judge { criteria, profile } => {
            let judge_profile = if profile.is_empty() { &options.profile } else { profile };
            let question = question_text(&example.inputs);
            match llm_judge(env, judge_profile, &question, prediction, criteria) {
                Ok(verdict) => Ok(verdict.score),
                Err(EvalError::UnparseableVerdict) => {
                    log::warn!(
                        target: "agentforge::eval",
                        "example {}: judge verdict unparseable, scoring 0",
                        example.id
                    );
                    Ok(0.0)
                }
                Err(EvalError::Llm(e)) if !e.is_systemic() => Ok(0.0),
                Err(error) => Err(error),
            }
        }
    }
}

/// The text a run stands for: the single output when there is exactly one,
/// else the first conventional answer key, else everything in key order.
pub fn extract_prediction(outputs: &ValueMap) -> String {
    if outputs.len() == 1 {
        return value_to_text(outputs.values().next().unwrap());
    }
    for key in ["answer", "code", "solution", "response", "best"] {
        if let Some(value) = outputs.get(key) {
            if !value.is_null() {
                return value_to_text(value);
            }
        }
    }
    outputs.values().map(value_to_text).collect::<Vec<_>>().join("\n")
}

fn question_text(inputs: &ValueMap) -> String {
    for key in ["question", "problem", "prompt"] {
        if let Some(value) = inputs.get(key) {
            if !value.is_null() {
                return value_to_text(value);
            }
        }
    }
    inputs.values().map(value_to_text).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::BenchmarkName;
    use crate::llm::{MockRule, MockScript};
    use crate::workflow::WorkFlowNode;
    use serde_json::json;

    fn qa_benchmark(pairs: &[(&str, &str, &str)]) -> Benchmark {
        let examples = pairs
            .iter()
            .map(|(id, question, gold)| TaskExample {
                id: id.to_string(),
                inputs: {
                    let mut m = ValueMap::new();
                    m.insert("question".into(), json!(question));
                    m
                },
                gold: Gold::Answer(gold.to_string()),
                metadata: ValueMap::new(),
            })
            .collect();
        let mut splits = BTreeMap::new();
        splits.insert(Split::Dev, examples);
        Benchmark { name: BenchmarkName::Custom, splits, default_metric: "exact_match".into() }
    }

    fn echo_workflow() -> WorkFlowGraph {
        let mut graph = WorkFlowGraph::new("echo");
        graph.add_node(WorkFlowNode::from_action(
            "Echo",
            ActionSpec::simple("Echo", "ANSWER {question}", "question", "answer"),
        ));
        graph
    }

    fn echo_env(pairs: &[(&str, &str, &str)]) -> LlmEnv {
        let rules = pairs
            .iter()
            .map(|(_, question, gold)| {
                MockRule::substring(&format!("ANSWER {question}"), gold)
            })
            .collect();
        LlmEnv::mock_only(MockScript::new(rules))
    }

    const FIVE: [(&str, &str, &str); 5] = [
        ("e1", "q one", "alpha"),
        ("e2", "q two", "beta"),
        ("e3", "q three", "gamma"),
        ("e4", "q four", "delta"),
        ("e5", "q five", "epsilon"),
    ];

    #[test]
    fn echo_workflow_scores_perfect_f1() {
        let benchmark = qa_benchmark(&FIVE);
        let graph = echo_workflow();
        let env = echo_env(&FIVE);
        let report = evaluate(
            EvalTarget::Workflow(&graph),
            &benchmark,
            Split::Dev,
            &Metric::F1,
            &env,
            &EvaluateOptions::new("mock"),
        )
        .unwrap();
        assert_eq!(report.n, 5);
        assert!((report.aggregate - 1.0).abs() < 1e-12);
        assert!(report.per_example.values().all(|s| (*s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn three_of_five_exact_match_is_point_six() {
        let benchmark = qa_benchmark(&FIVE);
        let graph = echo_workflow();
        // Echo the gold for the first three, fixed garbage for the rest.
        let rules = vec![
            MockRule::substring("ANSWER q one", "alpha"),
            MockRule::substring("ANSWER q two", "beta"),
            MockRule::substring("ANSWER q three", "gamma"),
            MockRule::substring("ANSWER q", "garbage"),
        ];
        let env = LlmEnv::mock_only(MockScript::new(rules));
        let report = evaluate(
            EvalTarget::Workflow(&graph),
            &benchmark,
            Split::Dev,
            &Metric::ExactMatch,
            &env,
            &EvaluateOptions::new("mock"),
        )
        .unwrap();
        assert_eq!(report.n, 5);
        assert!((report.aggregate - 0.6).abs() < 1e-9);
        assert_eq!(report.per_example["e4"], 0.0);
    }

    #[test]
    fn empty_split_yields_zero_aggregate() {
        let benchmark = qa_benchmark(&[]);
        let graph = echo_workflow();
        let env = LlmEnv::mock_only(MockScript::default());
        let report = evaluate(
            EvalTarget::Workflow(&graph),
            &benchmark,
            Split::Dev,
            &Metric::F1,
            &env,
            &EvaluateOptions::new("mock"),
        )
        .unwrap();
        assert_eq!(report.n, 0);
        assert_eq!(report.aggregate, 0.0);
        assert!(report.per_example.is_empty());
    }

    #[test]
    fn aggregate_is_the_mean_and_runs_reproduce() {
        let benchmark = qa_benchmark(&FIVE);
        let graph = echo_workflow();
        let env = echo_env(&FIVE[..3]);
        let serial = EvaluateOptions { concurrency: 1, ..EvaluateOptions::new("mock") };
        let parallel = EvaluateOptions { concurrency: 4, ..EvaluateOptions::new("mock") };
        let first = evaluate(
            EvalTarget::Workflow(&graph),
            &benchmark,
            Split::Dev,
            &Metric::ExactMatch,
            &env,
            &serial,
        )
        .unwrap();
        let second = evaluate(
            EvalTarget::Workflow(&graph),
            &benchmark,
            Split::Dev,
            &Metric::ExactMatch,
            &env,
            &parallel,
        )
        .unwrap();
        assert_eq!(first, second);
        let mean =
            first.per_example.values().sum::<f64>() / first.per_example.len() as f64;
        assert!((first.aggregate - mean).abs() < 1e-9);
    }

    #[test]
    fn sample_limit_truncates_the_split() {
        let benchmark = qa_benchmark(&FIVE);
        let graph = echo_workflow();
        let env = echo_env(&FIVE);
        let options =
            EvaluateOptions { sample_limit: Some(2), ..EvaluateOptions::new("mock") };
        let report = evaluate(
            EvalTarget::Workflow(&graph),
            &benchmark,
            Split::Dev,
            &Metric::F1,
            &env,
            &options,
        )
        .unwrap();
        assert_eq!(report.n, 2);
        assert!(report.per_example.contains_key("e1"));
        assert!(report.per_example.contains_key("e2"));
    }

    #[test]
    fn single_action_target_is_supported() {
        let benchmark = qa_benchmark(&FIVE);
        let spec = ActionSpec::simple("Echo", "ANSWER {question}", "question", "answer");
        let env = echo_env(&FIVE);
        let report = evaluate(
            EvalTarget::Action(&spec),
            &benchmark,
            Split::Dev,
            &Metric::F1,
            &env,
            &EvaluateOptions::new("mock"),
        )
        .unwrap();
        assert!((report.aggregate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_profile_aborts_instead_of_scoring_zeros() {
        let benchmark = qa_benchmark(&FIVE);
        let graph = echo_workflow();
        let env = echo_env(&FIVE);
        let result = evaluate(
            EvalTarget::Workflow(&graph),
            &benchmark,
            Split::Dev,
            &Metric::F1,
            &env,
            &EvaluateOptions::new("no_such_profile"),
        );
        assert!(result.is_err(), "systemic failures must abort");
    }

    #[test]
    fn judge_metric_uses_the_verdict_score() {
        let benchmark = qa_benchmark(&FIVE[..2]);
        let graph = echo_workflow();
        let mut rules: Vec<MockRule> = FIVE[..2]
            .iter()
            .map(|(_, q, g)| MockRule::substring(&format!("ANSWER {q}"), g))
            .collect();
        rules.push(MockRule::substring("impartial reviewer", "fine work\nSCORE: 73"));
        let env = LlmEnv::mock_only(MockScript::new(rules));
        let metric =
            Metric::Judge { criteria: "be correct".into(), profile: String::new() };
        let report = evaluate(
            EvalTarget::Workflow(&graph),
            &benchmark,
            Split::Dev,
            &metric,
            &env,
            &EvaluateOptions::new("mock"),
        )
        .unwrap();
        assert!((report.aggregate - 0.73).abs() < 1e-9);
    }

    #[test]
    fn pass_at_1_scores_generated_programs() {
        let mut splits = BTreeMap::new();
        splits.insert(
            Split::Dev,
            vec![TaskExample {
                id: "m1".into(),
                inputs: {
                    let mut m = ValueMap::new();
                    m.insert("prompt".into(), json!("write add"));
                    m
                },
                gold: Gold::Tests(vec!["assert add(1, 2) == 3".into()]),
                metadata: ValueMap::new(),
            }],
        );
        let benchmark =
            Benchmark { name: BenchmarkName::Mbpp, splits, default_metric: "pass_at_1".into() };
        let spec = ActionSpec::simple("Code", "CODE {prompt}", "prompt", "code");
        let env = LlmEnv::mock_only(MockScript::new(vec![MockRule::substring(
            "CODE write add",
            "def add(a, b):\n    return a + b",
        )]));
        match evaluate(
            EvalTarget::Action(&spec),
            &benchmark,
            Split::Dev,
            &Metric::PassAt1,
            &env,
            &EvaluateOptions::new("mock"),
        ) {
            Ok(report) => assert_eq!(report.aggregate, 1.0),
            Err(EvalError::SandboxUnavailable(_)) => (),
            Err(other) => panic!("{other}"),
        }
    }

    #[test]
    fn prediction_extraction_prefers_conventional_keys() {
        let mut outputs = ValueMap::new();
        outputs.insert("zeta".into(), json!("z"));
        assert_eq!(extract_prediction(&outputs), "z");
        outputs.insert("answer".into(), json!("a"));
        assert_eq!(extract_prediction(&outputs), "a");
        outputs.remove("answer");
        outputs.insert("alpha".into(), json!("x"));
        assert_eq!(extract_prediction(&outputs), "x\nz");
    }

    #[test]
    fn metric_parsing_round_trips() {
        for name in ["f1", "exact_match", "math_equal", "pass_at_1", "judge"] {
            assert_eq!(Metric::parse(name).unwrap().name(), name);
        }
        assert!(matches!(Metric::parse("bleu"), Err(EvalError::UnknownMetric(_))));
    }
}
