//! Directed acyclic task workflows.
//!
//! A graph is nodes (each wrapping either a set of agents or an ordered list
//! of action specs) joined by dependency edges with optional scheduling
//! priorities. Construction comes in three flavors: explicit graphs, a
//! sequential builder that infers edges from input/output and placeholder
//! dependencies ([`infer::infer_sequential_graph`]), and LLM planning from a
//! goal ([`generate::generate_workflow`]). [`validate::validate_graph`]
//! reports structural violations as data; the executor refuses to run a
//! graph that has any.

pub mod execute;
pub mod generate;
pub mod infer;
pub mod validate;

pub use execute::{
    execute, ready_nodes, ExecutionPolicy, ExecutionReport, NodeFailure, RunStatus, TraceEntry,
};
pub use generate::{generate_workflow, DEFAULT_PLANNER_PROMPT};
pub use infer::infer_sequential_graph;
pub use validate::{validate_graph, Violation};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{placeholders, ActionSpec, AgentError, IOField, OperatorKind, ParseMode};
use crate::llm::LlmError;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("invalid workflow: {}", format_violations(.0))]
    Validation(Vec<Violation>),
    #[error("node {node} references unknown agent {agent}")]
    UnknownAgent { node: String, agent: String },
    #[error("planner output invalid after retries: {feedback}")]
    PlannerOutputInvalid { feedback: String },
    #[error("workflow file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} at line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("unsupported workflow file extension {extension:?}")]
    UnsupportedExtension { extension: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

fn format_violations(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

// === statuses ===

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeStatus {
    #[default]
    Pending,
    Running,
    Completed,
    Failed,
}

impl NodeStatus {
    /// The only legal moves: PENDING→RUNNING, RUNNING→COMPLETED,
    /// RUNNING→FAILED.
    pub fn can_transition_to(self, next: NodeStatus) -> bool {
        matches!(
            (self, next),
            (NodeStatus::Pending, NodeStatus::Running)
                | (NodeStatus::Running, NodeStatus::Completed)
                | (NodeStatus::Running, NodeStatus::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, NodeStatus::Completed | NodeStatus::Failed)
    }
}

impl std::fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NodeStatus::Pending => "PENDING",
            NodeStatus::Running => "RUNNING",
            NodeStatus::Completed => "COMPLETED",
            NodeStatus::Failed => "FAILED",
        };
        f.write_str(s)
    }
}

// === graph structure ===

/// What runs when a node is scheduled: a set of candidate agents (first one
/// whose action inputs are satisfied wins) or an inline ordered action list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeExecutor {
    Agents(Vec<String>),
    ActionGraph(Vec<ActionSpec>),
}

impl NodeExecutor {
    pub fn is_empty(&self) -> bool {
        match self {
            NodeExecutor::Agents(names) => names.is_empty(),
            NodeExecutor::ActionGraph(specs) => specs.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkFlowNode {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub inputs: Vec<IOField>,
    #[serde(default)]
    pub outputs: Vec<IOField>,
    pub executor: NodeExecutor,
    #[serde(default)]
    pub status: NodeStatus,
}

impl WorkFlowNode {
    /// Node backed by a single inline action.
    pub fn from_action(name: impl Into<String>, action: ActionSpec) -> Self {
        let name = name.into();
        WorkFlowNode {
            name,
            description: action.description.clone(),
            inputs: action.inputs.clone(),
            outputs: action.outputs.clone(),
            executor: NodeExecutor::ActionGraph(vec![action]),
            status: NodeStatus::Pending,
        }
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.outputs.iter().map(|f| f.name.as_str()).collect()
    }

    /// Placeholders referenced by any action prompt of this node.
    pub fn prompt_placeholders(&self) -> BTreeSet<String> {
        match &self.executor {
            NodeExecutor::Agents(_) => BTreeSet::new(),
            NodeExecutor::ActionGraph(specs) => specs
                .iter()
                .flat_map(|s| placeholders(&s.prompt_template))
                .collect(),
        }
    }

    /// First action prompt, when the node runs an action graph.
    pub fn primary_prompt(&self) -> Option<&str> {
        match &self.executor {
            NodeExecutor::ActionGraph(specs) => {
                specs.first().map(|s| s.prompt_template.as_str())
            }
            NodeExecutor::Agents(_) => None,
        }
    }

    pub fn set_primary_prompt(&mut self, prompt: impl Into<String>) -> bool {
        match &mut self.executor {
            NodeExecutor::ActionGraph(specs) => match specs.first_mut() {
                Some(spec) => {
                    spec.prompt_template = prompt.into();
                    true
                }
                None => false,
            },
            NodeExecutor::Agents(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkFlowEdge {
    pub source: String,
    pub target: String,
    #[serde(default)]
    pub priority: f64,
}

impl WorkFlowEdge {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        WorkFlowEdge { source: source.into(), target: target.into(), priority: 0.0 }
    }

    pub fn with_priority(mut self, priority: f64) -> Self {
        self.priority = priority;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkFlowGraph {
    #[serde(default)]
    pub goal: String,
    pub nodes: Vec<WorkFlowNode>,
    #[serde(default)]
    pub edges: Vec<WorkFlowEdge>,
}

impl WorkFlowGraph {
    pub fn new(goal: impl Into<String>) -> Self {
        WorkFlowGraph { goal: goal.into(), nodes: Vec::new(), edges: Vec::new() }
    }

    pub fn node(&self, name: &str) -> Option<&WorkFlowNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn node_mut(&mut self, name: &str) -> Option<&mut WorkFlowNode> {
        self.nodes.iter_mut().find(|n| n.name == name)
    }

    pub fn node_names(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.name.as_str()).collect()
    }

    pub fn add_node(&mut self, node: WorkFlowNode) {
        self.nodes.push(node);
    }

    /// Removes a node and every edge touching it. Returns whether the node
    /// existed.
    pub fn remove_node(&mut self, name: &str) -> bool {
        let before = self.nodes.len();
        self.nodes.retain(|n| n.name != name);
        if self.nodes.len() == before {
            return false;
        }
        self.edges.retain(|e| e.source != name && e.target != name);
        true
    }

    pub fn add_edge(&mut self, edge: WorkFlowEdge) {
        self.edges.push(edge);
    }

    pub fn remove_edge(&mut self, source: &str, target: &str) -> bool {
        let before = self.edges.len();
        self.edges.retain(|e| !(e.source == source && e.target == target));
        self.edges.len() != before
    }

    pub fn has_edge(&self, source: &str, target: &str) -> bool {
        self.edges.iter().any(|e| e.source == source && e.target == target)
    }

    pub fn predecessors(&self, name: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.target == name)
            .map(|e| e.source.as_str())
            .collect()
    }

    pub fn successors(&self, name: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.source == name)
            .map(|e| e.target.as_str())
            .collect()
    }

    /// Every node reachable by walking edges backwards from `name`.
    pub fn ancestors(&self, name: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&str> = self.predecessors(name).into();
        while let Some(current) = queue.pop_front() {
            if seen.insert(current.to_string()) {
                queue.extend(self.predecessors(current));
            }
        }
        seen
    }

    /// Nodes with no outgoing edges; their outputs are the workflow outputs.
    pub fn sinks(&self) -> Vec<&WorkFlowNode> {
        self.nodes
            .iter()
            .filter(|n| !self.edges.iter().any(|e| e.source == n.name))
            .collect()
    }

    /// Which node produces each output name. Later duplicates are ignored
    /// here; validation reports them.
    pub fn producers(&self) -> BTreeMap<&str, &str> {
        let mut map = BTreeMap::new();
        for node in &self.nodes {
            for output in &node.outputs {
                map.entry(output.name.as_str()).or_insert(node.name.as_str());
            }
        }
        map
    }

    /// Required workflow-level inputs: declared node inputs that no node
    /// produces. These must be supplied to `execute`.
    pub fn workflow_input_names(&self) -> BTreeSet<String> {
        let producers = self.producers();
        let mut names = BTreeSet::new();
        for node in &self.nodes {
            for input in &node.inputs {
                if !producers.contains_key(input.name.as_str()) {
                    names.insert(input.name.clone());
                }
            }
        }
        names
    }

    /// Names of workflow-level inputs that are required by some node.
    pub fn required_workflow_inputs(&self) -> BTreeSet<String> {
        let producers = self.producers();
        let mut names = BTreeSet::new();
        for node in &self.nodes {
            for input in node.inputs.iter().filter(|f| f.required) {
                if !producers.contains_key(input.name.as_str()) {
                    names.insert(input.name.clone());
                }
            }
        }
        names
    }
}

// === the human-facing workflow file ===

/// One task in a workflow file; the shape agents and planners exchange.
/// Either `prompt` (an inline action) or `agents` (references into the agent
/// registry) gives the task its executor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDefinition {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub inputs: Vec<IOField>,
    #[serde(default)]
    pub outputs: Vec<IOField>,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub parse_mode: ParseMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<String>,
}

impl TaskDefinition {
    pub fn to_node(&self) -> WorkFlowNode {
        let executor = if self.agents.is_empty() {
            NodeExecutor::ActionGraph(vec![ActionSpec {
                name: self.name.clone(),
                description: self.description.clone(),
                prompt_template: self.prompt.clone(),
                inputs: self.inputs.clone(),
                outputs: self.outputs.clone(),
                parse_mode: self.parse_mode,
                operator: self.operator,
            }])
        } else {
            NodeExecutor::Agents(self.agents.clone())
        };
        WorkFlowNode {
            name: self.name.clone(),
            description: self.description.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            executor,
            status: NodeStatus::Pending,
        }
    }

    /// Slots consumed by this task: declared inputs plus prompt placeholders.
    pub fn consumed_names(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> =
            self.inputs.iter().map(|f| f.name.clone()).collect();
        names.extend(placeholders(&self.prompt));
        names.remove("memory");
        names
    }
}

/// Converts nodes back into task definitions (first action carries the
/// prompt for action-graph nodes). Multi-action nodes flatten to their first
/// action; graphs that need full fidelity should be checkpointed instead.
pub fn tasks_from_graph(graph: &WorkFlowGraph) -> Vec<TaskDefinition> {
    graph
        .nodes
        .iter()
        .map(|node| {
            let (prompt, parse_mode, operator, agents) = match &node.executor {
                NodeExecutor::ActionGraph(specs) => match specs.first() {
                    Some(spec) => {
                        (spec.prompt_template.clone(), spec.parse_mode, spec.operator, vec![])
                    }
                    None => (String::new(), ParseMode::Str, None, vec![]),
                },
                NodeExecutor::Agents(names) => {
                    (String::new(), ParseMode::Str, None, names.clone())
                }
            };
            TaskDefinition {
                name: node.name.clone(),
                description: node.description.clone(),
                inputs: node.inputs.clone(),
                outputs: node.outputs.clone(),
                prompt,
                parse_mode,
                operator,
                agents,
            }
        })
        .collect()
}

/// On-disk workflow document: a goal plus the task list, with edges optional
/// (omitted edges mean "infer them sequentially").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowFile {
    #[serde(default)]
    pub goal: String,
    pub tasks: Vec<TaskDefinition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<WorkFlowEdge>>,
}

impl WorkflowFile {
    pub fn into_graph(self) -> Result<WorkFlowGraph, WorkflowError> {
        match self.edges {
            Some(edges) => {
                let graph = WorkFlowGraph {
                    goal: self.goal,
                    nodes: self.tasks.iter().map(|t| t.to_node()).collect(),
                    edges,
                };
                let violations = validate_graph(&graph);
                if violations.is_empty() {
                    Ok(graph)
                } else {
                    Err(WorkflowError::Validation(violations))
                }
            }
            None => infer_sequential_graph(&self.goal, &self.tasks),
        }
    }
}

/// Loads a workflow file (YAML or JSON by extension) and returns the
/// validated graph.
pub fn load_workflow_file(path: impl AsRef<Path>) -> Result<WorkFlowGraph, WorkflowError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(WorkflowError::FileNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|source| WorkflowError::Io { path: path.to_path_buf(), source })?;
    let extension = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let file: WorkflowFile = match extension.as_str() {
        "yaml" | "yml" => serde_yaml::from_str(&text).map_err(|e| WorkflowError::Parse {
            path: path.to_path_buf(),
            line: e.location().map(|l| l.line()).unwrap_or(0),
            message: e.to_string(),
        })?,
        "json" => serde_json::from_str(&text).map_err(|e| WorkflowError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?,
        other => {
            return Err(WorkflowError::UnsupportedExtension { extension: other.to_string() })
        }
    };
    file.into_graph()
}

/// Writes the graph as a workflow file with explicit edges, so loading it
/// back reproduces the same topology.
pub fn save_workflow_file(
    graph: &WorkFlowGraph,
    path: impl AsRef<Path>,
) -> Result<(), WorkflowError> {
    let path = path.as_ref();
    let file = WorkflowFile {
        goal: graph.goal.clone(),
        tasks: tasks_from_graph(graph),
        edges: Some(graph.edges.clone()),
    };
    let extension = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let text = match extension.as_str() {
        "yaml" | "yml" => serde_yaml::to_string(&file).expect("serializable workflow"),
        "json" => serde_json::to_string_pretty(&file).expect("serializable workflow"),
        other => {
            return Err(WorkflowError::UnsupportedExtension { extension: other.to_string() })
        }
    };
    std::fs::write(path, text)
        .map_err(|source| WorkflowError::Io { path: path.to_path_buf(), source })
}
