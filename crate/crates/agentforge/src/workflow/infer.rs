//! Sequential graph inference: given an ordered task list, add an edge
//! T_i → T_j (i < j) whenever a later task consumes an output of an earlier
//! one, where "consumes" covers both declared inputs and prompt
//! placeholders.

use super::{TaskDefinition, WorkFlowEdge, WorkFlowGraph, WorkflowError};

/// Builds and validates the inferred graph. The task order is authoritative:
/// dependencies are only drawn from earlier tasks to later ones.
pub fn infer_sequential_graph(
    goal: &str,
    tasks: &[TaskDefinition],
) -> Result<WorkFlowGraph, WorkflowError> {
    let mut graph = WorkFlowGraph::new(goal);
    graph.nodes = tasks.iter().map(|t| t.to_node()).collect();

    for (j, consumer) in tasks.iter().enumerate() {
        let consumed = consumer.consumed_names();
        for producer in tasks.iter().take(j) {
            let feeds = producer.outputs.iter().any(|o| consumed.contains(&o.name));
            if feeds && !graph.has_edge(&producer.name, &consumer.name) {
                graph.add_edge(WorkFlowEdge::new(&producer.name, &consumer.name));
            }
        }
    }

    let violations = super::validate_graph(&graph);
    if violations.is_empty() {
        Ok(graph)
    } else {
        Err(WorkflowError::Validation(violations))
    }
}
