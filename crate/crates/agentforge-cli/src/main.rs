//! Command-line driver for the workflow engine. The library does the heavy
//! lifting; this binary parses flags, wires files into the right calls, and
//! maps every outcome onto a fixed exit-code contract: 0 success, 1 usage or
//! configuration error, 2 a workflow that ran and failed, 3 a planner that
//! never produced a valid workflow.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use agentforge::agent::register_agents_from_workflow;
use agentforge::checkpoint::canonical_string;
use agentforge::eval::{
    evaluate, load_benchmark, Benchmark, BenchmarkName, EvalTarget, EvaluateOptions, Metric,
    Split,
};
use agentforge::evolve::{
    aflow_optimize, mipro_optimize, rewritable_nodes, rewrite_node_prompt, textgrad_optimize,
    Algorithm, LlmRoles, OptimizationRound, OptimizeTarget, OptimizerConfig, RunHooks,
};
use agentforge::llm::LlmClient;
use agentforge::workflow::{
    execute, generate_workflow, load_workflow_file, save_workflow_file, ExecutionPolicy,
    WorkflowError,
};
use agentforge::{load_config, Config, LlmEnv, MockScript, ValueMap, WorkFlowGraph};

// === flags ===

#[derive(Parser)]
#[command(
    name = "agentforge",
    version,
    about = "Run, generate, evaluate, and optimize agent workflows"
)]
struct Cli {
    /// Engine config file (YAML or JSON).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for reports and checkpoints; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    workspace: Option<PathBuf>,
    /// Stdout form of the final report.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workflow file to completion.
    Run(RunArgs),
    /// Plan a workflow from a goal description and write it to a file.
    Generate(GenerateArgs),
    /// Score a workflow on one split of a benchmark.
    Evaluate(EvaluateArgs),
    /// Improve a workflow's prompts or topology against a benchmark.
    Optimize(OptimizeArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Workflow file (YAML or JSON).
    #[arg(long, value_name = "FILE")]
    workflow: PathBuf,
    /// Workflow-level input as key=value; repeat per input.
    #[arg(long = "input", value_name = "KEY=VALUE")]
    inputs: Vec<String>,
    /// Mock script file; runs offline under the "mock" profile.
    #[arg(long, value_name = "FILE")]
    mock: Option<PathBuf>,
    /// LLM profile name from the config (defaults to the only one).
    #[arg(long, value_name = "PROFILE")]
    llm: Option<String>,
    /// Concurrent node cap; defaults to the config value.
    #[arg(long, value_name = "N")]
    max_parallel: Option<usize>,
}

#[derive(clap::Args)]
struct GenerateArgs {
    /// What the workflow should accomplish.
    #[arg(long)]
    goal: String,
    /// Where to write the planned workflow (extension picks the syntax).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    mock: Option<PathBuf>,
    #[arg(long, value_name = "PROFILE")]
    llm: Option<String>,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    workflow: PathBuf,
    /// Benchmark name: hotpotqa, mbpp, math, gsm8k, humaneval, or custom.
    #[arg(long)]
    benchmark: String,
    /// Directory holding <split>.jsonl files.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Split to score: train, dev, or test.
    #[arg(long)]
    split: String,
    /// Metric: f1, exact_match, math_equal, pass_at_1, or judge.
    #[arg(long)]
    metric: String,
    /// Score only the first N examples.
    #[arg(long, value_name = "N")]
    limit: Option<usize>,
    #[arg(long, value_name = "FILE")]
    mock: Option<PathBuf>,
    #[arg(long, value_name = "PROFILE")]
    llm: Option<String>,
}

#[derive(clap::Args)]
struct OptimizeArgs {
    /// Optimizer to run: textgrad, mipro, or aflow.
    #[arg(long)]
    algorithm: String,
    /// Seed workflow file.
    #[arg(long, value_name = "FILE")]
    workflow: PathBuf,
    #[arg(long)]
    benchmark: String,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Round budget; overrides the config.
    #[arg(long, value_name = "N")]
    rounds: Option<u64>,
    /// RNG seed; overrides the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Checkpoint id to resume an interrupted workflow search from.
    #[arg(long, value_name = "CHECKPOINT")]
    resume: Option<String>,
    #[arg(long, value_name = "FILE")]
    mock: Option<PathBuf>,
    #[arg(long, value_name = "PROFILE")]
    llm: Option<String>,
}

// === exit-code contract ===

enum CliError {
    /// Bad flags, files, or configuration.
    Usage(String),
    /// The workflow executed and failed.
    RunFailed(String),
    /// The planner never produced a valid workflow.
    Planner(String),
}

impl CliError {
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::RunFailed(m) | CliError::Planner(m) => m,
        }
    }

    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::RunFailed(_) => 2,
            CliError::Planner(_) => 3,
        }
    }
}

fn usage(err: impl std::fmt::Display) -> CliError {
    CliError::Usage(err.to_string())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let code = match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.code()
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    let workspace = cli.workspace.as_deref();
    match cli.command {
        Command::Run(args) => cmd_run(args, cli.format, config, workspace),
        Command::Generate(args) => cmd_generate(args, cli.format, config, workspace),
        Command::Evaluate(args) => cmd_evaluate(args, cli.format, config, workspace),
        Command::Optimize(args) => cmd_optimize(args, cli.format, config, workspace),
    }
}

// === shared plumbing ===

struct Session {
    config: Config,
    env: LlmEnv,
    profile: String,
}

fn open_session(
    config_path: Option<&Path>,
    workspace: Option<&Path>,
    mock: Option<&Path>,
    llm: Option<&str>,
) -> Result<Session, CliError> {
    let mut config = match config_path {
        Some(path) => load_config(path).map_err(usage)?,
        None => Config::default(),
    };
    if let Some(dir) = workspace {
        config.workspace_dir = dir.to_path_buf();
    }
    let (env, profile) = match mock {
        Some(path) => {
            let script = MockScript::load(path).map_err(CliError::Usage)?;
            (LlmEnv::mock_only(script), "mock".to_string())
        }
        None => {
            let profile = match llm {
                Some(name) => name.to_string(),
                None => match config.llm_profiles.len() {
                    1 => config.llm_profiles.keys().next().unwrap().clone(),
                    0 => {
                        return Err(CliError::Usage(
                            "no LLM profiles configured; pass --mock or configure one".into(),
                        ))
                    }
                    _ => {
                        return Err(CliError::Usage(
                            "several LLM profiles configured; pick one with --llm".into(),
                        ))
                    }
                },
            };
            if !config.llm_profiles.contains_key(&profile) {
                return Err(CliError::Usage(format!("unknown LLM profile {profile:?}")));
            }
            let env = LlmEnv::new(LlmClient::new(), config.llm_profiles.clone());
            (env, profile)
        }
    };
    Ok(Session { config, env, profile })
}

fn reports_dir(config: &Config) -> PathBuf {
    config.workspace_dir.join("reports")
}

fn write_report(path: &Path, value: &Value) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| usage(format!("cannot create {}: {e}", parent.display())))?;
    }
    let mut text = canonical_string(value);
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

// === run ===

fn cmd_run(
    args: RunArgs,
    format: Format,
    config_path: Option<&Path>,
    workspace: Option<&Path>,
) -> Result<(), CliError> {
    let session = open_session(config_path, workspace, args.mock.as_deref(), args.llm.as_deref())?;
    let graph = load_workflow_file(&args.workflow).map_err(usage)?;

    let mut inputs = ValueMap::new();
    for raw in &args.inputs {
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--input {raw:?} is not key=value")))?;
        inputs.insert(key.to_string(), Value::String(value.to_string()));
    }
    let missing: Vec<String> = graph
        .required_workflow_inputs()
        .into_iter()
        .filter(|name| !inputs.contains_key(name))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Usage(format!(
            "missing required --input value(s): {}",
            missing.join(", ")
        )));
    }

    let manager = register_agents_from_workflow(&graph, &session.profile).map_err(usage)?;
    let policy = ExecutionPolicy {
        max_parallel: args.max_parallel.unwrap_or(session.config.max_parallel_nodes),
        ..ExecutionPolicy::default()
    };
    let report = execute(&graph, &manager, &session.env, &inputs, &policy).map_err(usage)?;

    match format {
        Format::Text => println!("{}", report.output_text()),
        Format::Json => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"))
        }
    }
    if report.succeeded() {
        Ok(())
    } else {
        let summary = report
            .failures
            .iter()
            .map(|f| format!("{}: {}", f.node, f.message))
            .collect::<Vec<_>>()
            .join("; ");
        Err(CliError::RunFailed(format!("workflow failed: {summary}")))
    }
}

// === generate ===

fn cmd_generate(
    args: GenerateArgs,
    format: Format,
    config_path: Option<&Path>,
    workspace: Option<&Path>,
) -> Result<(), CliError> {
    let session = open_session(config_path, workspace, args.mock.as_deref(), args.llm.as_deref())?;
    let graph = match generate_workflow(&args.goal, &session.env, &session.profile) {
        Ok(graph) => graph,
        Err(WorkflowError::PlannerOutputInvalid { feedback }) => {
            return Err(CliError::Planner(format!("planner output invalid: {feedback}")))
        }
        Err(other) => return Err(usage(other)),
    };
    save_workflow_file(&graph, &args.out).map_err(usage)?;

    let nodes: Vec<String> = graph.nodes.iter().map(|n| n.name.clone()).collect();
    let edges: Vec<String> =
        graph.edges.iter().map(|e| format!("{} -> {}", e.source, e.target)).collect();
    match format {
        Format::Text => {
            println!("wrote {}", args.out.display());
            println!("nodes: {}", nodes.join(", "));
            if edges.is_empty() {
                println!("edges: (none)");
            } else {
                println!("edges: {}", edges.join(", "));
            }
        }
        Format::Json => {
            let summary = json!({
                "out": args.out.display().to_string(),
                "goal": graph.goal,
                "nodes": nodes,
                "edges": edges,
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
    }
    Ok(())
}

// === evaluate ===

fn cmd_evaluate(
    args: EvaluateArgs,
    format: Format,
    config_path: Option<&Path>,
    workspace: Option<&Path>,
) -> Result<(), CliError> {
    let session = open_session(config_path, workspace, args.mock.as_deref(), args.llm.as_deref())?;
    let graph = load_workflow_file(&args.workflow).map_err(usage)?;
    let name: BenchmarkName = args.benchmark.parse().map_err(CliError::Usage)?;
    let split: Split = args.split.parse().map_err(CliError::Usage)?;
    let metric = Metric::parse(&args.metric).map_err(|_| {
        CliError::Usage(format!(
            "unknown metric {:?} (valid: f1, exact_match, math_equal, pass_at_1, judge)",
            args.metric
        ))
    })?;
    let benchmark = load_benchmark(name, &args.data, &[split]).map_err(usage)?;

    let options = EvaluateOptions {
        sample_limit: args.limit,
        ..EvaluateOptions::new(&session.profile)
    };
    let report = evaluate(
        EvalTarget::Workflow(&graph),
        &benchmark,
        split,
        &metric,
        &session.env,
        &options,
    )
    .map_err(usage)?;

    let path =
        reports_dir(&session.config).join(format!("eval-{}-{}.json", name.as_str(), split.as_str()));
    let report_value = serde_json::to_value(&report).expect("report serializes");
    write_report(&path, &report_value)?;

    match format {
        Format::Text => {
            println!(
                "metric={} split={} n={} aggregate={:.4}",
                report.metric,
                split.as_str(),
                report.n,
                report.aggregate
            );
            println!("report={}", path.display());
        }
        Format::Json => {
            println!("{}", serde_json::to_string_pretty(&report_value).expect("serializes"))
        }
    }
    Ok(())
}

// === optimize ===

fn cmd_optimize(
    args: OptimizeArgs,
    format: Format,
    config_path: Option<&Path>,
    workspace: Option<&Path>,
) -> Result<(), CliError> {
    let session = open_session(config_path, workspace, args.mock.as_deref(), args.llm.as_deref())?;
    let graph = load_workflow_file(&args.workflow).map_err(usage)?;
    let algorithm: Algorithm = args.algorithm.parse().map_err(CliError::Usage)?;
    let name: BenchmarkName = args.benchmark.parse().map_err(CliError::Usage)?;

    let mut splits = match algorithm {
        Algorithm::Aflow => vec![Split::Dev, Split::Test],
        _ => vec![Split::Train, Split::Dev],
    };
    if !splits.contains(&Split::Test) && args.data.join("test.jsonl").exists() {
        splits.push(Split::Test);
    }
    let benchmark = load_benchmark(name, &args.data, &splits).map_err(usage)?;
    let metric = Metric::parse(&benchmark.default_metric).map_err(usage)?;

    let mut cfg = session.config.optimizer.clone();
    cfg.algorithm = algorithm;
    if let Some(rounds) = args.rounds {
        cfg.max_rounds = rounds;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let roles = LlmRoles {
        executor: cfg.executor_profile.clone().unwrap_or_else(|| session.profile.clone()),
        optimizer: cfg.optimizer_profile.clone().unwrap_or_else(|| session.profile.clone()),
    };

    let print_round = |round: &OptimizationRound| {
        println!(
            "round={} score={:.4} accepted={}",
            round.round, round.val_score, round.accepted
        );
    };
    let on_round: Option<&(dyn Fn(&OptimizationRound) + Sync)> = match format {
        Format::Text => Some(&print_round),
        Format::Json => None,
    };
    let hooks = RunHooks {
        on_round,
        checkpoint_dir: Some(session.config.workspace_dir.join("checkpoints")),
        resume_from: args.resume.clone(),
    };

    let train = benchmark.split(Split::Train);
    let dev = benchmark.split(Split::Dev);
    let (optimized, best, log, test_split, test_score) = match algorithm {
        Algorithm::Textgrad => {
            let outcome = textgrad_optimize(
                OptimizeTarget::Workflow(&graph),
                train,
                dev,
                &metric,
                &cfg,
                &session.env,
                &roles,
                &hooks,
            )
            .map_err(usage)?;
            let optimized = outcome.graph.unwrap_or_else(|| graph.clone());
            let (split, score) = final_eval(&optimized, &benchmark, &metric, &session, &roles, &cfg)?;
            let best = serde_json::to_value(&outcome.best).expect("candidate serializes");
            (optimized, best, outcome.log, split, score)
        }
        Algorithm::Mipro => {
            let outcome = mipro_optimize(
                OptimizeTarget::Workflow(&graph),
                train,
                dev,
                &metric,
                &cfg,
                &session.env,
                &roles,
                &hooks,
            )
            .map_err(usage)?;
            let node = rewritable_nodes(&graph)
                .into_iter()
                .next()
                .expect("the optimizer ran, so a rewritable node exists");
            let optimized =
                rewrite_node_prompt(&graph, &node, &outcome.best.instruction, &outcome.best.demos);
            let (split, score) = final_eval(&optimized, &benchmark, &metric, &session, &roles, &cfg)?;
            let best = serde_json::to_value(&outcome.best).expect("candidate serializes");
            (optimized, best, outcome.log, split, score)
        }
        Algorithm::Aflow => {
            let outcome = aflow_optimize(
                &graph,
                &benchmark,
                &metric,
                &cfg,
                &session.env,
                &roles,
                &hooks,
            )
            .map_err(usage)?;
            let best = json!({
                "id": outcome.best.id,
                "parent_id": outcome.best.parent_id,
                "modification_note": outcome.best.modification_note,
                "mean_val": outcome.best.mean_val,
                "val_scores": outcome.best.val_scores,
            });
            (outcome.best.graph.clone(), best, outcome.log, Split::Test, outcome.test_score)
        }
    };

    let dir = reports_dir(&session.config);
    std::fs::create_dir_all(&dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    let optimized_path = dir.join(format!("optimized-{}.json", algorithm.as_str()));
    save_workflow_file(&optimized, &optimized_path).map_err(usage)?;

    let report_path = dir.join(format!("optimize-{}.json", algorithm.as_str()));
    let report = json!({
        "algorithm": algorithm.as_str(),
        "best": best,
        "test_split": test_split.as_str(),
        "test_score": test_score,
        "log": &log,
    });
    write_report(&report_path, &report)?;

    match format {
        Format::Text => {
            println!("optimized={}", optimized_path.display());
            println!("report={}", report_path.display());
            println!("test_split={}", test_split.as_str());
            println!("test_score={test_score:.4}");
        }
        Format::Json => {
            let summary = json!({
                "algorithm": algorithm.as_str(),
                "best": report["best"],
                "rounds": log.rounds.len(),
                "test_split": test_split.as_str(),
                "test_score": test_score,
                "optimized": optimized_path.display().to_string(),
                "report": report_path.display().to_string(),
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
    }
    Ok(())
}

/// Scores the optimized workflow once on the held-out split (dev when the
/// benchmark has no test split).
fn final_eval(
    graph: &WorkFlowGraph,
    benchmark: &Benchmark,
    metric: &Metric,
    session: &Session,
    roles: &LlmRoles,
    cfg: &OptimizerConfig,
) -> Result<(Split, f64), CliError> {
    let split = if benchmark.n(Split::Test) > 0 { Split::Test } else { Split::Dev };
    let options = EvaluateOptions {
        sample_limit: cfg.sample_limit,
        ..EvaluateOptions::new(&roles.executor)
    };
    let report = evaluate(
        EvalTarget::Workflow(graph),
        benchmark,
        split,
        metric,
        &session.env,
        &options,
    )
    .map_err(usage)?;
    Ok((split, report.aggregate))
}
