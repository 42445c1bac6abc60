//! Agents: an LLM profile, a bounded memory, and a set of typed actions.
//!
//! An action couples a prompt template with declared input/output fields and
//! a parse mode. Executing an action renders the template from a value map,
//! generates through the agent's profile, parses the reply into the declared
//! outputs, and appends the exchange to the agent's memory. The
//! [`AgentManager`] is the registry workflows execute against.

mod memory;
mod prompt;

pub use memory::{MemoryBuffer, MemoryEntry, DEFAULT_MEMORY_CAPACITY};
pub use prompt::{placeholders, render_prompt};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::jsonx;
use crate::llm::{GenerationRequest, LlmEnv, LlmError};
use crate::ValueMap;

/// How many memory entries the reserved `{memory}` slot renders.
pub const MEMORY_RECENT_K: usize = 10;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("unknown agent: {0}")]
    UnknownAgent(String),
    #[error("agent {agent} has no action named {action}")]
    UnknownAction { agent: String, action: String },
    #[error("duplicate agent name: {0}")]
    DuplicateAgentName(String),
    #[error("missing required input: {0}")]
    MissingInput(String),
    #[error("output parse failed: {0}")]
    Parse(String),
    #[error("invalid action spec: {0}")]
    InvalidSpec(String),
    #[error("operator execution failed: {0}")]
    Operator(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

// === field and action declarations ===

/// Declared value type of an input or output field. Accepts the short names
/// used in task files (`str`, `int`, `float`, `bool`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    #[default]
    #[serde(alias = "str", alias = "string")]
    Text,
    #[serde(alias = "int", alias = "float")]
    Number,
    #[serde(alias = "bool")]
    Boolean,
    #[serde(alias = "object")]
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IOField {
    pub name: String,
    #[serde(rename = "type", default)]
    pub field_type: FieldType,
    #[serde(default = "default_true")]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

fn default_true() -> bool {
    true
}

impl IOField {
    pub fn required(name: impl Into<String>, field_type: FieldType) -> Self {
        IOField { name: name.into(), field_type, required: true, description: String::new() }
    }

    pub fn optional(name: impl Into<String>, field_type: FieldType) -> Self {
        IOField { name: name.into(), field_type, required: false, description: String::new() }
    }

    pub fn text(name: impl Into<String>) -> Self {
        IOField::required(name, FieldType::Text)
    }
}

/// How an action's reply is turned into outputs: the whole reply as the one
/// declared output (`str`), or the first balanced JSON object in the reply
/// keyed by output names (`json`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Str,
    Json,
}

/// Library operator an action may delegate to instead of a single plain
/// generation. Dispatch lives in the evolve module; an action that names an
/// operator uses its prompt/inputs as that operator's arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Custom,
    CustomCodeGenerate,
    Programmer,
    ScEnsemble,
}

impl OperatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OperatorKind::Custom => "custom",
            OperatorKind::CustomCodeGenerate => "custom_code_generate",
            OperatorKind::Programmer => "programmer",
            OperatorKind::ScEnsemble => "sc_ensemble",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub prompt_template: String,
    #[serde(default)]
    pub inputs: Vec<IOField>,
    #[serde(default)]
    pub outputs: Vec<IOField>,
    #[serde(default)]
    pub parse_mode: ParseMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorKind>,
}

impl ActionSpec {
    /// A one-input, one-output, whole-reply action; the common case.
    pub fn simple(
        name: impl Into<String>,
        prompt_template: impl Into<String>,
        input: &str,
        output: &str,
    ) -> Self {
        ActionSpec {
            name: name.into(),
            description: String::new(),
            prompt_template: prompt_template.into(),
            inputs: vec![IOField::text(input)],
            outputs: vec![IOField::text(output)],
            parse_mode: ParseMode::Str,
            operator: None,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.name.trim().is_empty() {
            return Err(AgentError::InvalidSpec("action name is empty".into()));
        }
        for (list, label) in [(&self.inputs, "input"), (&self.outputs, "output")] {
            let mut seen = std::collections::BTreeSet::new();
            for field in list.iter() {
                if !prompt::is_identifier(&field.name) {
                    return Err(AgentError::InvalidSpec(format!(
                        "{label} name {:?} of action {} is not an identifier",
                        field.name, self.name
                    )));
                }
                if !seen.insert(&field.name) {
                    return Err(AgentError::InvalidSpec(format!(
                        "duplicate {label} name {:?} in action {}",
                        field.name, self.name
                    )));
                }
            }
        }
        // Operator actions map outputs by their own convention, so the
        // whole-reply arity rule only binds plain generations.
        if self.operator.is_none() && self.parse_mode == ParseMode::Str && self.outputs.len() != 1
        {
            return Err(AgentError::InvalidSpec(format!(
                "action {} uses parse_mode str and must declare exactly one output (has {})",
                self.name,
                self.outputs.len()
            )));
        }
        Ok(())
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.outputs.iter().map(|f| f.name.as_str()).collect()
    }
}

// === execution results ===

/// What an executed action said and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    /// Raw reply text from the model.
    pub content: String,
    pub sender: String,
    pub action: String,
    /// Parsed values, keyed exactly by the action's declared output names.
    pub outputs: ValueMap,
}

/// A [`Message`] plus the accounting the caller needs for report totals.
#[derive(Debug, Clone)]
pub struct ActionOutcome {
    pub message: Message,
    pub cost: f64,
    pub latency: f64,
}

// === the agent itself ===

#[derive(Debug, Clone)]
pub struct Agent {
    pub name: String,
    pub description: String,
    pub llm_profile: String,
    pub memory: MemoryBuffer,
    pub actions: Vec<ActionSpec>,
}

impl Agent {
    pub fn new(
        name: impl Into<String>,
        llm_profile: impl Into<String>,
        actions: Vec<ActionSpec>,
    ) -> Self {
        Agent {
            name: name.into(),
            description: String::new(),
            llm_profile: llm_profile.into(),
            memory: MemoryBuffer::default(),
            actions,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.actions.is_empty() {
            return Err(AgentError::InvalidSpec(format!("agent {} has no actions", self.name)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for action in &self.actions {
            action.validate()?;
            if !seen.insert(&action.name) {
                return Err(AgentError::InvalidSpec(format!(
                    "agent {} declares action {} twice",
                    self.name, action.name
                )));
            }
        }
        Ok(())
    }

    pub fn action(&self, name: &str) -> Option<&ActionSpec> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn execute(
        &self,
        action: &str,
        values: &ValueMap,
        env: &LlmEnv,
    ) -> Result<Message, AgentError> {
        self.execute_detailed(action, values, env).map(|o| o.message)
    }

    /// Renders, generates, parses, and remembers. The memory transcript is
    /// injected when the template references the reserved `{memory}` slot
    /// and the caller didn't supply one.
    pub fn execute_detailed(
        &self,
        action: &str,
        values: &ValueMap,
        env: &LlmEnv,
    ) -> Result<ActionOutcome, AgentError> {
        let spec = self.action(action).ok_or_else(|| AgentError::UnknownAction {
            agent: self.name.clone(),
            action: action.to_string(),
        })?;
        let outcome = run_spec_inner(
            spec,
            values,
            env,
            &self.llm_profile,
            &self.name,
            Some(&self.memory),
        )?;
        Ok(outcome)
    }
}

/// Executes a spec without an agent (no memory): the path used for one-off
/// node tasks and optimizer probes. `sender` in the resulting message is the
/// spec name.
pub fn run_spec(
    spec: &ActionSpec,
    values: &ValueMap,
    env: &LlmEnv,
    profile: &str,
) -> Result<ActionOutcome, AgentError> {
    run_spec_inner(spec, values, env, profile, &spec.name.clone(), None)
}

fn run_spec_inner(
    spec: &ActionSpec,
    values: &ValueMap,
    env: &LlmEnv,
    profile: &str,
    sender: &str,
    memory: Option<&MemoryBuffer>,
) -> Result<ActionOutcome, AgentError> {
    for field in spec.inputs.iter().filter(|f| f.required) {
        match values.get(&field.name) {
            None | Some(Value::Null) => {
                return Err(AgentError::MissingInput(field.name.clone()))
            }
            Some(_) => {}
        }
    }

    let mut values = values.clone();
    if let Some(memory) = memory {
        if !values.contains_key("memory")
            && placeholders(&spec.prompt_template).iter().any(|p| p == "memory")
        {
            values.insert("memory".into(), Value::String(memory.transcript(MEMORY_RECENT_K)));
        }
    }

    let prompt = render_prompt(&spec.prompt_template, &values)?;
    let response = env.generate(profile, &GenerationRequest::user(&prompt))?;
    let outputs = parse_outputs(spec, &response.content)?;

    if let Some(memory) = memory {
        memory.append("user", prompt);
        memory.append("assistant", response.content.clone());
    }

    Ok(ActionOutcome {
        message: Message {
            content: response.content,
            sender: sender.to_string(),
            action: spec.name.clone(),
            outputs,
        },
        cost: response.cost,
        latency: response.latency,
    })
}

/// Maps reply text onto the declared outputs. In `json` mode the first
/// balanced JSON object in the reply is used; required keys must be present,
/// optional missing keys become null, undeclared keys are dropped.
pub fn parse_outputs(spec: &ActionSpec, content: &str) -> Result<ValueMap, AgentError> {
    let mut outputs = ValueMap::new();
    match spec.parse_mode {
        ParseMode::Str => {
            let field = spec.outputs.first().ok_or_else(|| {
                AgentError::InvalidSpec(format!("action {} declares no outputs", spec.name))
            })?;
            outputs.insert(field.name.clone(), Value::String(content.to_string()));
        }
        ParseMode::Json => {
            let raw = jsonx::first_json_object(content).ok_or_else(|| {
                AgentError::Parse(format!(
                    "action {} expected a JSON object in the reply, found none",
                    spec.name
                ))
            })?;
            let parsed: BTreeMap<String, Value> = serde_json::from_str(raw)
                .map_err(|e| AgentError::Parse(format!("action {}: {e}", spec.name)))?;
            for field in &spec.outputs {
                match parsed.get(&field.name) {
                    Some(value) => {
                        outputs.insert(field.name.clone(), value.clone());
                    }
                    None if field.required => {
                        return Err(AgentError::Parse(format!(
                            "action {} reply is missing required output {:?}",
                            spec.name, field.name
                        )));
                    }
                    None => {
                        outputs.insert(field.name.clone(), Value::Null);
                    }
                }
            }
        }
    }
    Ok(outputs)
}

// === registry ===

/// Named agents plus the profile used when a task runs without a registered
/// agent.
#[derive(Debug, Default)]
pub struct AgentManager {
    agents: BTreeMap<String, Agent>,
    default_profile: String,
}

impl AgentManager {
    pub fn new(default_profile: impl Into<String>) -> Self {
        AgentManager { agents: BTreeMap::new(), default_profile: default_profile.into() }
    }

    pub fn default_profile(&self) -> &str {
        &self.default_profile
    }

    pub fn register(&mut self, agent: Agent) -> Result<(), AgentError> {
        agent.validate()?;
        if self.agents.contains_key(&agent.name) {
            return Err(AgentError::DuplicateAgentName(agent.name));
        }
        self.agents.insert(agent.name.clone(), agent);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Agent> {
        self.agents.get(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.agents.keys().map(|s| s.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn execute_action(
        &self,
        agent: &str,
        action: &str,
        values: &ValueMap,
        env: &LlmEnv,
    ) -> Result<Message, AgentError> {
        self.execute_action_detailed(agent, action, values, env).map(|o| o.message)
    }

    pub fn execute_action_detailed(
        &self,
        agent: &str,
        action: &str,
        values: &ValueMap,
        env: &LlmEnv,
    ) -> Result<ActionOutcome, AgentError> {
        let agent = self
            .agents
            .get(agent)
            .ok_or_else(|| AgentError::UnknownAgent(agent.to_string()))?;
        agent.execute_detailed(action, values, env)
    }
}

/// Builds a manager with one agent per workflow node that carries inline
/// actions, named after the node, so repeated node executions share memory.
/// Nodes that delegate to named agents are skipped; register those agents
/// separately before executing.
pub fn register_agents_from_workflow(
    graph: &crate::workflow::WorkFlowGraph,
    llm_profile: &str,
) -> Result<AgentManager, AgentError> {
    let mut manager = AgentManager::new(llm_profile);
    for node in &graph.nodes {
        if let crate::workflow::NodeExecutor::ActionGraph(specs) = &node.executor {
            let mut agent = Agent::new(&node.name, llm_profile, specs.clone());
            agent.description = node.description.clone();
            manager.register(agent)?;
        }
    }
    Ok(manager)
}
