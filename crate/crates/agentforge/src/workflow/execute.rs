//! Status-driven parallel workflow execution. The executor owns the value
//! context and status map; node work runs on scoped worker threads and
//! results are applied serially by the scheduling loop (single writer, many
//! workers).

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{run_spec, AgentError, AgentManager};
use crate::evolve::operators::run_operator;
use crate::llm::LlmEnv;
use crate::{ValueMap, value_to_text};

use super::{validate_graph, NodeExecutor, NodeStatus, WorkFlowGraph, WorkFlowNode, WorkflowError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionPolicy {
    /// Stop scheduling new nodes after the first failure.
    pub fail_fast: bool,
    pub max_parallel: usize,
}

impl Default for ExecutionPolicy {
    fn default() -> Self {
        ExecutionPolicy { fail_fast: true, max_parallel: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Succeeded,
    Failed,
}

/// One node's lifetime in the run: seconds since the run started.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub node: String,
    pub start: f64,
    pub end: f64,
    pub status: NodeStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeFailure {
    pub node: String,
    pub message: String,
    /// True when retrying other examples cannot help (auth, unknown profile,
    /// bad config); evaluation aborts instead of scoring zeros.
    pub systemic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionReport {
    /// Declared outputs of the graph's sink nodes, as far as they were produced.
    pub outputs: ValueMap,
    pub statuses: BTreeMap<String, NodeStatus>,
    pub trace: Vec<TraceEntry>,
    pub failures: Vec<NodeFailure>,
    pub total_cost: f64,
    /// Wall-clock seconds for the whole run.
    pub total_latency: f64,
    pub status: RunStatus,
}

impl ExecutionReport {
    pub fn succeeded(&self) -> bool {
        self.status == RunStatus::Succeeded
    }

    /// The run's primary text output: the single sink output when there is
    /// exactly one, else the sink outputs joined in name order.
    pub fn output_text(&self) -> String {
        if self.outputs.len() == 1 {
            return value_to_text(self.outputs.values().next().unwrap());
        }
        self.outputs
            .iter()
            .map(|(name, value)| format!("{name}: {}", value_to_text(value)))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// PENDING nodes whose predecessors have all COMPLETED, ordered by max
/// incoming edge priority (descending), then name. Nodes with no incoming
/// edge rank at priority zero.
pub fn ready_nodes(graph: &WorkFlowGraph, statuses: &BTreeMap<String, NodeStatus>) -> Vec<String> {
    let mut ready: Vec<(f64, &str)> = graph
        .nodes
        .iter()
        .filter(|node| {
            statuses.get(&node.name) == Some(&NodeStatus::Pending)
                && graph
                    .predecessors(&node.name)
                    .iter()
                    .all(|p| statuses.get(*p) == Some(&NodeStatus::Completed))
        })
        .map(|node| {
            let priority = graph
                .edges
                .iter()
                .filter(|e| e.target == node.name)
                .map(|e| e.priority)
                .fold(0.0f64, f64::max);
            (priority, node.name.as_str())
        })
        .collect();
    ready.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    ready.into_iter().map(|(_, name)| name.to_string()).collect()
}

struct NodeDone {
    outputs: ValueMap,
    cost: f64,
    latency: f64,
}

struct NodeOutcome {
    name: String,
    start: f64,
    end: f64,
    result: Result<NodeDone, (String, bool)>,
}

/// Runs a validated workflow to completion. Failures are data in the report;
/// `Err` here means the preconditions did not hold (invalid graph, an agent
/// name no manager entry resolves).
pub fn execute(
    graph: &WorkFlowGraph,
    manager: &AgentManager,
    env: &LlmEnv,
    workflow_inputs: &ValueMap,
    policy: &ExecutionPolicy,
) -> Result<ExecutionReport, WorkflowError> {
    let violations = validate_graph(graph);
    if !violations.is_empty() {
        return Err(WorkflowError::Validation(violations));
    }
    for node in &graph.nodes {
        if let NodeExecutor::Agents(names) = &node.executor {
            for agent in names {
                if manager.get(agent).is_none() {
                    return Err(WorkflowError::UnknownAgent {
                        node: node.name.clone(),
                        agent: agent.clone(),
                    });
                }
            }
        }
    }

    let started = Instant::now();
    let max_parallel = policy.max_parallel.max(1);
    let mut statuses: BTreeMap<String, NodeStatus> =
        graph.nodes.iter().map(|n| (n.name.clone(), NodeStatus::Pending)).collect();
    let mut values = workflow_inputs.clone();
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut failures: Vec<NodeFailure> = Vec::new();
    let mut total_cost = 0.0;
    let mut halted = false;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<NodeOutcome>();
        let mut running = 0usize;
        loop {
            if !halted {
                for name in ready_nodes(graph, &statuses) {
                    if running >= max_parallel {
                        break;
                    }
                    debug_assert!(statuses[&name].can_transition_to(NodeStatus::Running));
                    statuses.insert(name.clone(), NodeStatus::Running);
                    let node = graph.node(&name).expect("ready node exists").clone();
                    let snapshot = values.clone();
                    let tx = tx.clone();
                    let start = started.elapsed().as_secs_f64();
                    scope.spawn(move || {
                        let result = run_node(&node, &snapshot, manager, env);
                        let end = started.elapsed().as_secs_f64();
                        let _ = tx.send(NodeOutcome { name: node.name, start, end, result });
                    });
                    running += 1;
                }
            }
            if running == 0 {
                break;
            }
            let done = rx.recv().expect("a worker holds the sender");
            running -= 1;
            match done.result {
                Ok(node_done) => {
                    debug_assert!(statuses[&done.name].can_transition_to(NodeStatus::Completed));
                    statuses.insert(done.name.clone(), NodeStatus::Completed);
                    values.extend(node_done.outputs);
                    total_cost += node_done.cost;
                    let _ = node_done.latency;
                    trace.push(TraceEntry {
                        node: done.name,
                        start: done.start,
                        end: done.end,
                        status: NodeStatus::Completed,
                    });
                }
                Err((message, systemic)) => {
                    debug_assert!(statuses[&done.name].can_transition_to(NodeStatus::Failed));
                    statuses.insert(done.name.clone(), NodeStatus::Failed);
                    log::warn!(target: "agentforge::workflow", "node {} failed: {message}", done.name);
                    trace.push(TraceEntry {
                        node: done.name.clone(),
                        start: done.start,
                        end: done.end,
                        status: NodeStatus::Failed,
                    });
                    failures.push(NodeFailure { node: done.name, message, systemic });
                    if policy.fail_fast {
                        halted = true;
                    }
                }
            }
        }
    });

    let mut outputs = ValueMap::new();
    for sink in graph.sinks() {
        for field in &sink.outputs {
            if let Some(value) = values.get(&field.name) {
                outputs.insert(field.name.clone(), value.clone());
            }
        }
    }
    let status = if statuses.values().all(|s| *s == NodeStatus::Completed) {
        RunStatus::Succeeded
    } else {
        RunStatus::Failed
    };
    Ok(ExecutionReport {
        outputs,
        statuses,
        trace,
        failures,
        total_cost,
        total_latency: started.elapsed().as_secs_f64(),
        status,
    })
}

// === node-level execution ===

fn run_node(
    node: &WorkFlowNode,
    snapshot: &ValueMap,
    manager: &AgentManager,
    env: &LlmEnv,
) -> Result<NodeDone, (String, bool)> {
    match &node.executor {
        NodeExecutor::Agents(names) => run_agent_set(node, names, snapshot, manager, env),
        NodeExecutor::ActionGraph(specs) => {
            let mut local = snapshot.clone();
            let mut cost = 0.0;
            let mut latency = 0.0;
            for spec in specs {
                let profile = manager
                    .get(&node.name)
                    .map(|a| a.llm_profile.as_str())
                    .unwrap_or_else(|| manager.default_profile());
                let outcome = if spec.operator.is_some() {
                    run_operator(spec, &local, env, profile)
                } else if let Some(agent) =
                    manager.get(&node.name).filter(|a| a.action(&spec.name).is_some())
                {
                    agent.execute_detailed(&spec.name, &local, env)
                } else {
                    run_spec(spec, &local, env, profile)
                }
                .map_err(|e| describe(&node.name, e))?;
                local.extend(outcome.message.outputs);
                cost += outcome.cost;
                latency += outcome.latency;
            }
            let outputs = collect_node_outputs(node, &local)?;
            Ok(NodeDone { outputs, cost, latency })
        }
    }
}

/// Agent-set rule: the first (agent, action) pair in listed order whose
/// required inputs are all present and non-null.
fn run_agent_set(
    node: &WorkFlowNode,
    names: &[String],
    snapshot: &ValueMap,
    manager: &AgentManager,
    env: &LlmEnv,
) -> Result<NodeDone, (String, bool)> {
    for name in names {
        let agent = manager.get(name).expect("checked before scheduling");
        for action in &agent.actions {
            let satisfied = action
                .inputs
                .iter()
                .filter(|f| f.required)
                .all(|f| snapshot.get(&f.name).map(|v| !v.is_null()).unwrap_or(false));
            if !satisfied {
                continue;
            }
            let outcome = agent
                .execute_detailed(&action.name, snapshot, env)
                .map_err(|e| describe(&node.name, e))?;
            let mut local = snapshot.clone();
            local.extend(outcome.message.outputs);
            let outputs = collect_node_outputs(node, &local)?;
            return Ok(NodeDone { outputs, cost: outcome.cost, latency: outcome.latency });
        }
    }
    Err((
        format!("node {}: no agent action has all required inputs available", node.name),
        false,
    ))
}

/// A node publishes exactly its declared outputs; a required one the actions
/// never produced fails the node.
fn collect_node_outputs(
    node: &WorkFlowNode,
    local: &ValueMap,
) -> Result<ValueMap, (String, bool)> {
    let mut outputs = ValueMap::new();
    for field in &node.outputs {
        match local.get(&field.name) {
            Some(value) if !value.is_null() => {
                outputs.insert(field.name.clone(), value.clone());
            }
            _ if field.required => {
                return Err((
                    format!("node {} produced no value for output {:?}", node.name, field.name),
                    false,
                ));
            }
            _ => {
                outputs.insert(field.name.clone(), Value::Null);
            }
        }
    }
    Ok(outputs)
}

fn describe(node: &str, error: AgentError) -> (String, bool) {
    let systemic = matches!(&error, AgentError::Llm(e) if e.is_systemic());
    (format!("node {node}: {error}"), systemic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{register_agents_from_workflow, ActionSpec, IOField};
    use crate::llm::{MockRule, MockScript};
    use crate::workflow::tests::planning_coding_tasks;
    use crate::workflow::{infer_sequential_graph, WorkFlowEdge};

    fn mock_env(rules: Vec<MockRule>) -> LlmEnv {
        LlmEnv::mock_only(MockScript::new(rules))
    }

    fn node(name: &str, input: &str, output: &str) -> WorkFlowNode {
        let spec =
            ActionSpec::simple(name, format!("{name} transforms {{{input}}}"), input, output);
        WorkFlowNode::from_action(name, spec)
    }

    fn chain_graph() -> WorkFlowGraph {
        let mut graph = WorkFlowGraph::new("chain");
        graph.add_node(node("A", "seed", "mid"));
        graph.add_node(node("B", "mid", "final"));
        graph.add_edge(WorkFlowEdge::new("A", "B"));
        graph
    }

    fn seed_inputs() -> ValueMap {
        let mut inputs = ValueMap::new();
        inputs.insert("seed".into(), Value::String("s0".into()));
        inputs
    }

    #[test]
    fn two_task_plan_then_code_run() {
        let graph = infer_sequential_graph(
            "Generate code to solve programming problems",
            &planning_coding_tasks(),
        )
        .unwrap();
        let manager = register_agents_from_workflow(&graph, "mock").unwrap();
        let env = mock_env(vec![
            MockRule::substring("software architect", "PLAN-1"),
            MockRule::substring("developer", "CODE-1"),
        ]);
        let mut inputs = ValueMap::new();
        inputs.insert(
            "problem".into(),
            Value::String(
                "Write a function to find the longest palindromic substring in a given string."
                    .into(),
            ),
        );
        let report =
            execute(&graph, &manager, &env, &inputs, &ExecutionPolicy::default()).unwrap();
        assert!(report.succeeded());
        assert_eq!(report.outputs["code"], Value::String("CODE-1".into()));
        assert_eq!(report.statuses["Planning"], NodeStatus::Completed);
        assert_eq!(report.statuses["Coding"], NodeStatus::Completed);
    }

    #[test]
    fn fail_fast_leaves_downstream_pending() {
        let graph = chain_graph();
        let manager = register_agents_from_workflow(&graph, "missing_profile").unwrap();
        let env = mock_env(vec![]);
        let report =
            execute(&graph, &manager, &env, &seed_inputs(), &ExecutionPolicy::default()).unwrap();
        assert_eq!(report.status, RunStatus::Failed);
        assert_eq!(report.statuses["A"], NodeStatus::Failed);
        assert_eq!(report.statuses["B"], NodeStatus::Pending);
        assert_eq!(report.failures.len(), 1);
        assert!(report.failures[0].systemic, "unknown profile is systemic");
    }

    #[test]
    fn ready_order_follows_priority_then_name() {
        let mut graph = WorkFlowGraph::new("diamond");
        graph.add_node(node("A", "seed", "a_out"));
        graph.add_node(node("B", "a_out", "b_out"));
        graph.add_node(node("C", "a_out", "c_out"));
        graph.add_node(node("D", "b_out", "d_out"));
        graph.add_edge(WorkFlowEdge::new("A", "B").with_priority(1.0));
        graph.add_edge(WorkFlowEdge::new("A", "C").with_priority(2.0));
        graph.add_edge(WorkFlowEdge::new("B", "D"));
        graph.add_edge(WorkFlowEdge::new("C", "D"));

        let mut statuses: BTreeMap<String, NodeStatus> =
            graph.nodes.iter().map(|n| (n.name.clone(), NodeStatus::Pending)).collect();
        assert_eq!(ready_nodes(&graph, &statuses), vec!["A"]);
        statuses.insert("A".into(), NodeStatus::Completed);
        assert_eq!(ready_nodes(&graph, &statuses), vec!["C", "B"]);
        statuses.insert("B".into(), NodeStatus::Completed);
        statuses.insert("C".into(), NodeStatus::Completed);
        assert_eq!(ready_nodes(&graph, &statuses), vec!["D"]);
        statuses.insert("D".into(), NodeStatus::Completed);
        assert!(ready_nodes(&graph, &statuses).is_empty());
    }

    fn diamond_graph() -> WorkFlowGraph {
        let mut graph = WorkFlowGraph::new("diamond");
        graph.add_node(node("A", "seed", "a_out"));
        graph.add_node(WorkFlowNode::from_action(
            "B",
            ActionSpec::simple("B", "left {a_out}", "a_out", "b_out"),
        ));
        graph.add_node(node("C", "a_out", "c_out"));
        graph.add_node(WorkFlowNode::from_action(
            "D",
            ActionSpec::simple("D", "join {b_out} with {c_out}", "b_out", "d_out"),
        ));
        graph.add_edge(WorkFlowEdge::new("A", "B"));
        graph.add_edge(WorkFlowEdge::new("A", "C"));
        graph.add_edge(WorkFlowEdge::new("B", "D"));
        graph.add_edge(WorkFlowEdge::new("C", "D"));
        graph
    }

    fn diamond_env() -> LlmEnv {
        mock_env(vec![
            MockRule::substring("A transforms", "a1").with_delay(30),
            MockRule::substring("left", "b1").with_delay(60),
            MockRule::substring("C transforms", "c1").with_delay(60),
            MockRule::substring("join", "d1"),
        ])
    }

    #[test]
    fn parallel_branches_overlap_and_match_serial_outputs() {
        let graph = diamond_graph();
        let manager = register_agents_from_workflow(&graph, "mock").unwrap();
        let env = diamond_env();

        let parallel = ExecutionPolicy { fail_fast: true, max_parallel: 2 };
        let report =
            execute(&graph, &manager, &env, &seed_inputs(), &parallel).unwrap();
        assert!(report.succeeded());
        let by_node = |name: &str| {
            report.trace.iter().find(|t| t.node == name).expect("traced")
        };
        let (b, c) = (by_node("B"), by_node("C"));
        assert!(
            b.start < c.end && c.start < b.end,
            "B [{:.3},{:.3}] and C [{:.3},{:.3}] should overlap",
            b.start,
            b.end,
            c.start,
            c.end
        );

        let serial = ExecutionPolicy { fail_fast: true, max_parallel: 1 };
        let serial_report =
            execute(&graph, &manager, &env, &seed_inputs(), &serial).unwrap();
        assert!(serial_report.succeeded());
        assert_eq!(report.outputs, serial_report.outputs);
    }

    #[test]
    fn trace_is_topologically_sound() {
        let graph = diamond_graph();
        let manager = register_agents_from_workflow(&graph, "mock").unwrap();
        let env = diamond_env();
        let policy = ExecutionPolicy { fail_fast: true, max_parallel: 4 };
        let report = execute(&graph, &manager, &env, &seed_inputs(), &policy).unwrap();
        assert!(report.succeeded());
        for edge in &graph.edges {
            let source_end =
                report.trace.iter().find(|t| t.node == edge.source).unwrap().end;
            let target_start =
                report.trace.iter().find(|t| t.node == edge.target).unwrap().start;
            assert!(
                source_end <= target_start,
                "{} ends at {source_end}, {} starts at {target_start}",
                edge.source,
                edge.target
            );
        }
        for node in &graph.nodes {
            assert_eq!(
                report.trace.iter().filter(|t| t.node == node.name).count(),
                1,
                "each node is traced exactly once"
            );
        }
    }

    #[test]
    fn invalid_graph_and_unknown_agents_are_preconditions() {
        let mut graph = chain_graph();
        graph.add_edge(WorkFlowEdge::new("B", "A"));
        let manager = register_agents_from_workflow(&chain_graph(), "mock").unwrap();
        let env = mock_env(vec![]);
        assert!(matches!(
            execute(&graph, &manager, &env, &seed_inputs(), &ExecutionPolicy::default()),
            Err(WorkflowError::Validation(_))
        ));

        let mut graph = chain_graph();
        graph.node_mut("B").unwrap().executor = NodeExecutor::Agents(vec!["ghost".into()]);
        assert!(matches!(
            execute(&graph, &manager, &env, &seed_inputs(), &ExecutionPolicy::default()),
            Err(WorkflowError::UnknownAgent { .. })
        ));
    }

    #[test]
    fn continue_on_failure_runs_unaffected_branch() {
        let mut graph = WorkFlowGraph::new("fork");
        graph.add_node(node("A", "seed", "a_out"));
        graph.add_node(node("B", "a_out", "b_out"));
        graph.add_node(node("C", "a_out", "c_out"));
        graph.add_edge(WorkFlowEdge::new("A", "B"));
        graph.add_edge(WorkFlowEdge::new("A", "C"));
        // B's action parses its reply as JSON with a required key the mock
        // never provides, so B alone fails.
        let mut graph_b_json = graph.clone();
        if let Some(b) = graph_b_json.node_mut("B") {
            if let NodeExecutor::ActionGraph(specs) = &mut b.executor {
                specs[0].parse_mode = crate::agent::ParseMode::Json;
            }
        }
        let manager = register_agents_from_workflow(&graph_b_json, "mock").unwrap();
        let env = mock_env(vec![
            MockRule::substring("A transforms", "a1"),
            MockRule::substring("B transforms", "not json"),
            MockRule::substring("C transforms", "c1"),
        ]);
        let policy = ExecutionPolicy { fail_fast: false, max_parallel: 1 };
        let report =
            execute(&graph_b_json, &manager, &env, &seed_inputs(), &policy).unwrap();
        assert_eq!(report.status, RunStatus::Failed);
        assert_eq!(report.statuses["B"], NodeStatus::Failed);
        assert_eq!(report.statuses["C"], NodeStatus::Completed);
        assert!(!report.failures[0].systemic);
    }

    #[test]
    fn agent_set_picks_first_satisfiable_action() {
        let mut graph = WorkFlowGraph::new("pick");
        let mut n = node("Pick", "later", "answer");
        n.executor = NodeExecutor::Agents(vec!["helper".into()]);
        n.inputs = vec![IOField::text("question")];
        graph.add_node(n);

        let helper = crate::agent::Agent::new(
            "helper",
            "mock",
            vec![
                ActionSpec::simple("first", "uses {later}", "later", "answer"),
                ActionSpec::simple("second", "answer {question}", "question", "answer"),
            ],
        );

        let mut manager = crate::agent::AgentManager::new("mock");
        manager.register(helper).unwrap();
        let env = mock_env(vec![MockRule::substring("answer", "via-second")]);
        let mut inputs = ValueMap::new();
        inputs.insert("question".into(), Value::String("q".into()));
        let report =
            execute(&graph, &manager, &env, &inputs, &ExecutionPolicy::default()).unwrap();
        assert!(report.succeeded());
        assert_eq!(report.outputs["answer"], Value::String("via-second".into()));
    }

    #[test]
    fn empty_graph_trivially_succeeds() {
        let graph = WorkFlowGraph::new("empty");
        let manager = register_agents_from_workflow(&graph, "mock").unwrap();
        let env = mock_env(vec![]);
        let report =
            execute(&graph, &manager, &env, &ValueMap::new(), &ExecutionPolicy::default())
                .unwrap();
        assert!(report.succeeded());
        assert!(report.outputs.is_empty());
        assert!(report.trace.is_empty());
    }
}
