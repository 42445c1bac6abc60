//! The reusable operator library: node behaviors that optimizers can insert
//! into workflows. An operator action renders its inputs, may call the LLM
//! or the sandbox, and maps a conventional result key onto the node's
//! declared outputs.

use serde_json::Value;

use crate::agent::{
    placeholders, render_prompt, ActionOutcome, ActionSpec, AgentError, Message, OperatorKind,
};
use crate::eval::metrics::comparable_answer;
use crate::eval::sandbox::{run_sandbox, ExitKind};
use crate::eval::EvalError;
use crate::llm::{GenerationRequest, LlmEnv};
use crate::{value_to_text, ValueMap};

pub const DEFAULT_PROGRAMMER_PROMPT: &str = include_str!("../data/programmer_prompt.txt");
/// Operator descriptions given to the workflow optimizer when it proposes
/// graph modifications.
pub const OPERATOR_CATALOG: &str = include_str!("../data/operator_catalog.txt");

const SANDBOX_TIMEOUT_SECONDS: f64 = 10.0;

/// The conventional key an operator writes its main result under; a node
/// declaring a single output of any name receives this value.
pub fn principal_output(kind: OperatorKind) -> &'static str {
    match kind {
        OperatorKind::Custom => "response",
        OperatorKind::CustomCodeGenerate => "code",
        OperatorKind::Programmer => "output",
        OperatorKind::ScEnsemble => "best",
    }
}

/// Executes an operator-backed action spec against the accumulated values.
pub fn run_operator(
    spec: &ActionSpec,
    values: &ValueMap,
    env: &LlmEnv,
    profile: &str,
) -> Result<ActionOutcome, AgentError> {
    let kind = spec
        .operator
        .ok_or_else(|| AgentError::InvalidSpec(format!("action {} has no operator", spec.name)))?;
    let (content, raw, cost, latency) = match kind {
        OperatorKind::Custom => op_custom(spec, values, env, profile)?,
        OperatorKind::CustomCodeGenerate => {
            let (content, _, cost, latency) = op_custom(spec, values, env, profile)?;
            let mut raw = ValueMap::new();
            raw.insert("code".into(), Value::String(extract_code(&content)));
            (content, raw, cost, latency)
        }
        OperatorKind::Programmer => op_programmer(spec, values, env, profile)?,
        OperatorKind::ScEnsemble => op_sc_ensemble(spec, values)?,
    };
    let outputs = map_outputs(spec, &raw, principal_output(kind))?;
    Ok(ActionOutcome {
        message: Message {
            content,
            sender: format!("operator:{}", kind.as_str()),
            action: spec.name.clone(),
            outputs,
        },
        cost,
        latency,
    })
}

type RawResult = (String, ValueMap, f64, f64);

fn op_custom(
    spec: &ActionSpec,
    values: &ValueMap,
    env: &LlmEnv,
    profile: &str,
) -> Result<RawResult, AgentError> {
    let prompt = instruction_prompt(spec, values)?;
    let response = env.generate(profile, &GenerationRequest::user(&prompt))?;
    let mut raw = ValueMap::new();
    raw.insert("response".into(), Value::String(response.content.clone()));
    Ok((response.content, raw, response.cost, response.latency))
}

fn op_programmer(
    spec: &ActionSpec,
    values: &ValueMap,
    env: &LlmEnv,
    profile: &str,
) -> Result<RawResult, AgentError> {
    let prompt = if spec.prompt_template.trim().is_empty() {
        let mut slots = ValueMap::new();
        slots.insert("problem".into(), Value::String(problem_text(spec, values)));
        slots.insert("analysis".into(), Value::String(text_or_empty(values, "analysis")));
        render_prompt(DEFAULT_PROGRAMMER_PROMPT, &slots)?
    } else {
        instruction_prompt(spec, values)?
    };
    let response = env.generate(profile, &GenerationRequest::user(&prompt))?;
    let code = extract_code(&response.content);

    let run = match run_sandbox(&code, "", SANDBOX_TIMEOUT_SECONDS) {
        Ok(run) => run,
        Err(EvalError::SandboxUnavailable(reason)) => {
            return Err(AgentError::Operator(reason));
        }
        Err(other) => return Err(AgentError::Operator(other.to_string())),
    };
    let output = match &run.exit {
        ExitKind::Ok => run.stdout.clone(),
        ExitKind::Nonzero(code) => {
            format!("EXECUTION_ERROR: exit status {code}: {}", run.stderr.trim())
        }
        ExitKind::Timeout => {
            format!("EXECUTION_ERROR: timed out after {SANDBOX_TIMEOUT_SECONDS}s")
        }
        ExitKind::Forbidden => "EXECUTION_ERROR: terminated by the sandbox".to_string(),
    };

    let mut raw = ValueMap::new();
    raw.insert("code".into(), Value::String(code));
    raw.insert("output".into(), Value::String(output));
    Ok((response.content, raw, response.cost, response.latency + run.wall_time))
}

fn op_sc_ensemble(spec: &ActionSpec, values: &ValueMap) -> Result<RawResult, AgentError> {
    // An explicit "solutions" list wins; a node wired into a graph instead
    // declares one input per upstream solver, so gather those in order.
    let solutions = match values.get("solutions") {
        Some(Value::Array(items)) if !items.is_empty() => {
            items.iter().map(value_to_text).collect::<Vec<_>>()
        }
        Some(Value::String(s)) if !s.is_empty() => vec![s.clone()],
        _ => {
            let gathered: Vec<String> = spec
                .inputs
                .iter()
                .filter(|f| f.name != "problem")
                .filter_map(|f| match values.get(&f.name) {
                    None | Some(Value::Null) => None,
                    Some(v) => Some(value_to_text(v)),
                })
                .collect();
            if gathered.is_empty() {
                return Err(AgentError::MissingInput("solutions".into()));
            }
            gathered
        }
    };

    let answers: Vec<String> = solutions.iter().map(|s| comparable_answer(s)).collect();
    let mut counts = std::collections::BTreeMap::new();
    for answer in &answers {
        *counts.entry(answer.as_str()).or_insert(0usize) += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let best_index = answers
        .iter()
        .position(|a| counts[a.as_str()] == top)
        .expect("non-empty solutions have a majority answer");

    let best = solutions[best_index].clone();
    let mut raw = ValueMap::new();
    raw.insert("best".into(), Value::String(best.clone()));
    Ok((best, raw, 0.0, 0.0))
}

// === prompt and output plumbing ===

/// A template with placeholders is rendered as-is; a plain instruction is
/// followed by the gathered input text on its own line.
fn instruction_prompt(spec: &ActionSpec, values: &ValueMap) -> Result<String, AgentError> {
    if !placeholders(&spec.prompt_template).is_empty() {
        return render_prompt(&spec.prompt_template, values);
    }
    let instruction = spec.prompt_template.trim();
    let input = gathered_input(spec, values);
    Ok(match (instruction.is_empty(), input.is_empty()) {
        (true, _) => input,
        (_, true) => instruction.to_string(),
        (false, false) => format!("{instruction}\n{input}"),
    })
}

/// The content an operator works on: an explicit "input" value wins, else
/// the declared inputs in declaration order ("name: value" lines when there
/// is more than one).
fn gathered_input(spec: &ActionSpec, values: &ValueMap) -> String {
    if let Some(value) = values.get("input") {
        if !value.is_null() {
            return value_to_text(value);
        }
    }
    let present: Vec<(&str, String)> = spec
        .inputs
        .iter()
        .filter_map(|field| {
            values
                .get(&field.name)
                .filter(|v| !v.is_null())
                .map(|v| (field.name.as_str(), value_to_text(v)))
        })
        .collect();
    match present.as_slice() {
        [] => String::new(),
        [(_, only)] => only.clone(),
        many => many.iter().map(|(name, text)| format!("{name}: {text}")).collect::<Vec<_>>().join("\n"),
    }
}

fn problem_text(spec: &ActionSpec, values: &ValueMap) -> String {
    let direct = text_or_empty(values, "problem");
    if !direct.is_empty() {
        return direct;
    }
    spec.inputs
        .iter()
        .find_map(|field| values.get(&field.name).filter(|v| !v.is_null()).map(value_to_text))
        .unwrap_or_default()
}

fn text_or_empty(values: &ValueMap, key: &str) -> String {
    values.get(key).filter(|v| !v.is_null()).map(value_to_text).unwrap_or_default()
}

/// First fenced code block, language tag dropped; a reply without a closed
/// fence is taken whole.
pub fn extract_code(text: &str) -> String {
    if let Some(open) = text.find("```") {
        let after = &text[open + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        if let Some(close) = body.find("```") {
            return body[..close].trim().to_string();
        }
    }
    text.trim().to_string()
}

fn map_outputs(spec: &ActionSpec, raw: &ValueMap, principal: &str) -> Result<ValueMap, AgentError> {
    let mut outputs = ValueMap::new();
    let single = spec.outputs.len() == 1;
    for field in &spec.outputs {
        if let Some(value) = raw.get(&field.name) {
            outputs.insert(field.name.clone(), value.clone());
        } else if single {
            outputs.insert(
                field.name.clone(),
                raw.get(principal).cloned().unwrap_or(Value::Null),
            );
        } else if field.required {
            return Err(AgentError::Parse(format!(
                "operator produced no value for required output {:?}",
                field.name
            )));
        } else {
            outputs.insert(field.name.clone(), Value::Null);
        }
    }
    Ok(outputs)
}
