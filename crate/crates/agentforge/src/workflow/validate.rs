//! Structural validation. Violations are returned as data so planners can
//! repair their output and optimizers can reject mutations without
//! unwinding.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{NodeExecutor, WorkFlowGraph};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("duplicate node name {0:?}")]
    DuplicateNode(String),
    #[error("output {name:?} is produced by both {first} and {second}")]
    DuplicateOutput { name: String, first: String, second: String },
    #[error("node {0} has an empty executor")]
    EmptyExecutor(String),
    #[error("invalid action in node {node}: {message}")]
    InvalidAction { node: String, message: String },
    #[error("edge {from}->{to} references missing node {missing:?}")]
    DanglingEdge { from: String, to: String, missing: String },
    #[error("self loop on node {0}")]
    SelfLoop(String),
    #[error("duplicate edge {from}->{to}")]
    DuplicateEdge { from: String, to: String },
    #[error("cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("input {input:?} of node {node} cannot be satisfied")]
    UnsatisfiedInput { node: String, input: String },
}

/// Checks the whole graph and reports every violation found, in a
/// deterministic order. An empty result means the graph is executable.
pub fn validate_graph(graph: &WorkFlowGraph) -> Vec<Violation> {
    let mut violations = Vec::new();

    // Node-local checks and name uniqueness.
    let mut node_names = BTreeSet::new();
    for node in &graph.nodes {
        if !node_names.insert(node.name.as_str()) {
            violations.push(Violation::DuplicateNode(node.name.clone()));
        }
        if node.executor.is_empty() {
            violations.push(Violation::EmptyExecutor(node.name.clone()));
        }
        if let NodeExecutor::ActionGraph(specs) = &node.executor {
            for spec in specs {
                if let Err(err) = spec.validate() {
                    violations.push(Violation::InvalidAction {
                        node: node.name.clone(),
                        message: err.to_string(),
                    });
                }
            }
        }
    }

    // Single-producer rule: output names unique across the graph.
    let mut producer_of: BTreeMap<&str, &str> = BTreeMap::new();
    for node in &graph.nodes {
        for output in &node.outputs {
            match producer_of.get(output.name.as_str()) {
                Some(first) if *first != node.name.as_str() => {
                    violations.push(Violation::DuplicateOutput {
                        name: output.name.clone(),
                        first: first.to_string(),
                        second: node.name.clone(),
                    });
                }
                Some(_) => {
                    violations.push(Violation::DuplicateOutput {
                        name: output.name.clone(),
                        first: node.name.clone(),
                        second: node.name.clone(),
                    });
                }
                None => {
                    producer_of.insert(output.name.as_str(), node.name.as_str());
                }
            }
        }
    }

    // Edge checks.
    let mut seen_edges = BTreeSet::new();
    for edge in &graph.edges {
        for endpoint in [&edge.source, &edge.target] {
            if !node_names.contains(endpoint.as_str()) {
                violations.push(Violation::DanglingEdge {
                    from: edge.source.clone(),
                    to: edge.target.clone(),
                    missing: endpoint.clone(),
                });
            }
        }
        if edge.source == edge.target {
            violations.push(Violation::SelfLoop(edge.source.clone()));
        }
        if !seen_edges.insert((edge.source.as_str(), edge.target.as_str())) {
            violations.push(Violation::DuplicateEdge {
                from: edge.source.clone(),
                to: edge.target.clone(),
            });
        }
    }

    if let Some(cycle) = find_cycle(graph) {
        violations.push(Violation::Cycle(cycle));
    }

    // Input satisfaction. A declared input is fine when nothing produces it
    // (the caller supplies it as a workflow-level input) or when its producer
    // is an ancestor; a producer elsewhere in the graph can't be ordered
    // before the consumer, so it's a violation. Prompt placeholders must
    // resolve to declared inputs, ancestor outputs, workflow-level inputs,
    // same-node earlier action outputs, or the reserved memory slot.
    let workflow_inputs: BTreeSet<String> = graph
        .nodes
        .iter()
        .flat_map(|n| n.inputs.iter())
        .filter(|f| !producer_of.contains_key(f.name.as_str()))
        .map(|f| f.name.clone())
        .collect();
    for node in &graph.nodes {
        let ancestors = graph.ancestors(&node.name);
        let available_outputs: BTreeSet<&str> = producer_of
            .iter()
            .filter(|(_, producer)| ancestors.contains(**producer))
            .map(|(name, _)| *name)
            .collect();

        for input in &node.inputs {
            if let Some(producer) = producer_of.get(input.name.as_str()) {
                if !ancestors.contains(*producer) {
                    violations.push(Violation::UnsatisfiedInput {
                        node: node.name.clone(),
                        input: input.name.clone(),
                    });
                }
            }
        }

        if let NodeExecutor::ActionGraph(specs) = &node.executor {
            let declared: BTreeSet<&str> =
                node.inputs.iter().map(|f| f.name.as_str()).collect();
            let mut local_outputs: BTreeSet<&str> = BTreeSet::new();
            for spec in specs {
                for name in crate::agent::placeholders(&spec.prompt_template) {
                    let satisfied = name == "memory"
                        || declared.contains(name.as_str())
                        || available_outputs.contains(name.as_str())
                        || workflow_inputs.contains(&name)
                        || local_outputs.contains(name.as_str());
                    if !satisfied {
                        violations.push(Violation::UnsatisfiedInput {
                            node: node.name.clone(),
                            input: name,
                        });
                    }
                }
                local_outputs.extend(spec.outputs.iter().map(|f| f.name.as_str()));
            }
        }
    }

    violations
}

/// Depth-first search for one witness cycle, returned as the node sequence
/// along the cycle (first node repeated implicitly).
fn find_cycle(graph: &WorkFlowGraph) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }

    let names: Vec<&str> = graph.node_names();
    let mut color: BTreeMap<&str, Color> =
        names.iter().map(|n| (*n, Color::White)).collect();

    fn visit<'a>(
        graph: &'a WorkFlowGraph,
        node: &'a str,
        color: &mut BTreeMap<&'a str, Color>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        color.insert(node, Color::Gray);
        stack.push(node);
        for next in graph.successors(node) {
            match color.get(next).copied().unwrap_or(Color::Black) {
                Color::Gray => {
                    let start = stack.iter().position(|n| *n == next).unwrap_or(0);
                    return Some(stack[start..].iter().map(|s| s.to_string()).collect());
                }
                Color::White => {
                    if let Some(cycle) = visit(graph, next, color, stack) {
                        return Some(cycle);
                    }
                }
                Color::Black => {}
            }
        }
        stack.pop();
        color.insert(node, Color::Black);
        None
    }

    let mut stack = Vec::new();
    for name in names {
        if color[name] == Color::White {
            if let Some(cycle) = visit(graph, name, &mut color, &mut stack) {
                return Some(cycle);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{ActionSpec, IOField};
    use crate::workflow::{NodeStatus, WorkFlowEdge, WorkFlowNode};

    fn node(name: &str, inputs: &[&str], outputs: &[&str], prompt: &str) -> WorkFlowNode {
        WorkFlowNode {
            name: name.into(),
            description: String::new(),
            inputs: inputs.iter().map(|n| IOField::text(*n)).collect(),
            outputs: outputs.iter().map(|n| IOField::text(*n)).collect(),
            executor: NodeExecutor::ActionGraph(vec![ActionSpec {
                name: name.into(),
                description: String::new(),
                prompt_template: prompt.into(),
                inputs: inputs.iter().map(|n| IOField::text(*n)).collect(),
                outputs: outputs.iter().map(|n| IOField::text(*n)).collect(),
                parse_mode: crate::agent::ParseMode::Str,
                operator: None,
            }]),
            status: NodeStatus::Pending,
        }
    }

    fn graph(nodes: Vec<WorkFlowNode>, edges: Vec<(&str, &str)>) -> WorkFlowGraph {
        WorkFlowGraph {
            goal: String::new(),
            nodes,
            edges: edges.into_iter().map(|(s, t)| WorkFlowEdge::new(s, t)).collect(),
        }
    }

    #[test]
    fn a_valid_chain_has_no_violations() {
        let g = graph(
            vec![
                node("A", &["q"], &["a_out"], "{q}"),
                node("B", &["a_out"], &["b_out"], "{a_out}"),
                node("C", &["b_out"], &["c_out"], "{b_out}"),
            ],
            vec![("A", "B"), ("B", "C")],
        );
        assert_eq!(validate_graph(&g), vec![]);
    }

    #[test]
    fn two_cycle_is_reported_with_witness() {
        let g = graph(
            vec![node("A", &[], &["a_out"], "x"), node("B", &[], &["b_out"], "x")],
            vec![("A", "B"), ("B", "A")],
        );
        let violations = validate_graph(&g);
        let cycle = violations.iter().find_map(|v| match v {
            Violation::Cycle(path) => Some(path.clone()),
            _ => None,
        });
        let mut cycle = cycle.expect("cycle reported");
        cycle.sort();
        assert_eq!(cycle, vec!["A", "B"]);
    }

    #[test]
    fn placeholder_without_producer_is_unsatisfied() {
        // The two-task plan/code shape with the planning node removed: the
        // {plan} placeholder has no producer and is not a declared input.
        let g = graph(
            vec![node(
                "Coding",
                &["problem"],
                &["code"],
                "Problem: {problem}\nImplementation Plan: {plan}",
            )],
            vec![],
        );
        let violations = validate_graph(&g);
        assert!(violations.iter().any(|v| matches!(
            v,
            Violation::UnsatisfiedInput { node, input } if node == "Coding" && input == "plan"
        )));
    }

    #[test]
    fn declared_input_from_non_ancestor_is_unsatisfied() {
        let g = graph(
            vec![
                node("A", &["b_out"], &["a_out"], "{b_out}"),
                node("B", &["a_out"], &["b_out"], "{a_out}"),
            ],
            vec![("A", "B")],
        );
        let violations = validate_graph(&g);
        assert!(violations.iter().any(|v| matches!(
            v,
            Violation::UnsatisfiedInput { node, input } if node == "A" && input == "b_out"
        )));
    }

    #[test]
    fn duplicate_outputs_nodes_and_edges_are_caught() {
        let mut g = graph(
            vec![
                node("A", &[], &["same"], "x"),
                node("B", &[], &["same"], "x"),
                node("B", &[], &["other"], "x"),
            ],
            vec![("A", "B"), ("A", "B"), ("A", "A")],
        );
        g.nodes[2].executor = NodeExecutor::Agents(vec![]);
        let violations = validate_graph(&g);
        assert!(violations.iter().any(|v| matches!(v, Violation::DuplicateNode(n) if n == "B")));
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::DuplicateOutput { name, .. } if name == "same")));
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::DuplicateEdge { from, .. } if from == "A")));
        assert!(violations.iter().any(|v| matches!(v, Violation::SelfLoop(n) if n == "A")));
        assert!(violations.iter().any(|v| matches!(v, Violation::EmptyExecutor(n) if n == "B")));
    }

    #[test]
    fn dangling_edge_names_the_missing_endpoint() {
        let g = graph(vec![node("A", &[], &["a_out"], "x")], vec![("A", "Ghost")]);
        let violations = validate_graph(&g);
        assert!(violations.iter().any(|v| matches!(
            v,
            Violation::DanglingEdge { missing, .. } if missing == "Ghost"
        )));
    }

    #[test]
    fn empty_graph_is_valid() {
        assert_eq!(validate_graph(&WorkFlowGraph::new("g")), vec![]);
    }

    #[test]
    fn memory_slot_is_always_satisfied() {
        let g = graph(vec![node("A", &["q"], &["a_out"], "{memory} {q}")], vec![]);
        assert_eq!(validate_graph(&g), vec![]);
    }

    #[test]
    fn later_action_may_use_earlier_action_output() {
        let mut n = node("A", &["q"], &["draft", "final"], "{q}");
        if let NodeExecutor::ActionGraph(specs) = &mut n.executor {
            specs[0].outputs = vec![IOField::text("draft")];
            let mut second = specs[0].clone();
            second.name = "refine".into();
            second.prompt_template = "improve {draft}".into();
            second.outputs = vec![IOField::text("final")];
            specs.push(second);
        }
        n.outputs = vec![IOField::text("draft"), IOField::text("final")];
        let g = graph(vec![n], vec![]);
        assert_eq!(validate_graph(&g), vec![]);
    }
}
