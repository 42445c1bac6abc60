//! LLM-planned workflow construction: ask a planner model for a task list,
//! infer the graph, and repair invalid output by re-prompting with the
//! violation messages (at most two repairs).

use serde_json::Value;

use super::{infer_sequential_graph, TaskDefinition, WorkFlowGraph, WorkflowError};
use crate::agent::render_prompt;
use crate::jsonx;
use crate::llm::{GenerationRequest, LlmEnv};
use crate::ValueMap;

/// Planner meta-prompt shipped with the engine. Slots: `{goal}`, `{feedback}`.
pub const DEFAULT_PLANNER_PROMPT: &str = include_str!("../data/planner_prompt.txt");

const MAX_REPAIRS: usize = 2;

/// Plans a workflow for `goal` using the given profile and the default
/// planner prompt.
pub fn generate_workflow(
    goal: &str,
    env: &LlmEnv,
    profile: &str,
) -> Result<WorkFlowGraph, WorkflowError> {
    generate_workflow_with(goal, env, profile, DEFAULT_PLANNER_PROMPT)
}

/// As [`generate_workflow`] with a caller-supplied planner template.
pub fn generate_workflow_with(
    goal: &str,
    env: &LlmEnv,
    profile: &str,
    planner_template: &str,
) -> Result<WorkFlowGraph, WorkflowError> {
    let mut feedback = String::new();
    for _attempt in 0..=MAX_REPAIRS {
        let mut values = ValueMap::new();
        values.insert("goal".into(), Value::String(goal.to_string()));
        values.insert(
            "feedback".into(),
            Value::String(if feedback.is_empty() {
                String::new()
            } else {
                format!("Your previous reply was invalid: {feedback}\nFix these problems and reply again with the corrected JSON array only.")
            }),
        );
        let prompt = render_prompt(planner_template, &values).map_err(WorkflowError::Agent)?;
        let reply = env.generate(profile, &GenerationRequest::user(&prompt))?;

        match plan_from_reply(goal, &reply.content) {
            Ok(graph) => return Ok(graph),
            Err(problem) => {
                log::warn!("planner output rejected: {problem}");
                feedback = problem;
            }
        }
    }
    Err(WorkflowError::PlannerOutputInvalid { feedback })
}

fn plan_from_reply(goal: &str, reply: &str) -> Result<WorkFlowGraph, String> {
    let raw = jsonx::first_json_array(reply)
        .ok_or_else(|| "reply contains no JSON array".to_string())?;
    let tasks: Vec<TaskDefinition> =
        serde_json::from_str(raw).map_err(|e| format!("task list does not parse: {e}"))?;
    if tasks.is_empty() {
        return Err("task list is empty".to_string());
    }
    infer_sequential_graph(goal, &tasks).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockRule, MockScript};

    fn planner_env(rules: Vec<MockRule>) -> LlmEnv {
        LlmEnv::mock_only(MockScript::new(rules))
    }

    fn two_task_json() -> String {
        serde_json::to_string(&crate::workflow::tests::planning_coding_tasks()).unwrap()
    }

    #[test]
    fn scripted_planner_yields_the_two_task_graph() {
        let env = planner_env(vec![MockRule::substring(
            "Generate code to solve programming problems",
            &two_task_json(),
        )]);
        let graph =
            generate_workflow("Generate code to solve programming problems", &env, "mock")
                .unwrap();
        assert_eq!(graph.node_names(), vec!["Planning", "Coding"]);
        assert!(graph.has_edge("Planning", "Coding"));
        assert_eq!(graph.goal, "Generate code to solve programming problems");
    }

    #[test]
    fn empty_task_list_is_invalid_after_retries() {
        let env = planner_env(vec![MockRule::substring("Goal:", "[]")]);
        let err = generate_workflow("anything", &env, "mock").unwrap_err();
        assert!(matches!(err, WorkflowError::PlannerOutputInvalid { feedback } if feedback.contains("empty")));
    }

    #[test]
    fn repair_prompt_carries_violations_and_can_succeed() {
        let broken = r#"[
            {"name": "a", "outputs": [{"name": "same"}], "prompt": "go"},
            {"name": "b", "outputs": [{"name": "same"}], "prompt": "use {same}"}
        ]"#;
        // The repair prompt embeds the violation text; keying on it proves
        // the second round saw the feedback.
        let env = planner_env(vec![
            MockRule::substring("previous reply was invalid", &two_task_json()),
            MockRule::substring("Goal:", broken),
        ]);
        let graph = generate_workflow("anything", &env, "mock").unwrap();
        assert_eq!(graph.node_names(), vec!["Planning", "Coding"]);
    }

    #[test]
    fn persistent_garbage_exhausts_repairs() {
        let env = planner_env(vec![MockRule::substring("Goal:", "not json at all")]);
        let err = generate_workflow("anything", &env, "mock").unwrap_err();
        assert!(matches!(err, WorkflowError::PlannerOutputInvalid { .. }));
    }
}
