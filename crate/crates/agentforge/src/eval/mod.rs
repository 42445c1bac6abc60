//! Benchmark evaluation: JSONL dataset loading, task metrics, a process
//! sandbox for code scoring, an LLM judge, and the evaluation driver that
//! runs a workflow over a split and aggregates per-example scores.

pub mod evaluate;
pub mod judge;
pub mod metrics;
pub mod sandbox;

pub use evaluate::{
    evaluate, extract_prediction, score_prediction, EvalTarget, EvaluateOptions, Metric,
    MetricReport,
};
pub use judge::{llm_judge, JudgeVerdict, DEFAULT_JUDGE_PROMPT};
pub use metrics::{
    comparable_answer, exact_match, extract_boxed, f1_score, last_number, math_equal,
    normalize_answer,
};
pub use sandbox::{pass_at_1, run_sandbox, ExitKind, SandboxResult};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::AgentError;
use crate::llm::LlmError;
use crate::workflow::WorkflowError;
use crate::ValueMap;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("benchmark file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("schema error in {path} at line {line}: {message}")]
    Schema { path: PathBuf, line: usize, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error("judge reply had no parseable SCORE line")]
    UnparseableVerdict,
    #[error("dataset split is empty")]
    EmptyDataset,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}

// === datasets ===

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "validation" | "val" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, dev, or test)")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkName {
    Hotpotqa,
    Mbpp,
    Math,
    Gsm8k,
    Humaneval,
    Custom,
}

impl BenchmarkName {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchmarkName::Hotpotqa => "hotpotqa",
            BenchmarkName::Mbpp => "mbpp",
            BenchmarkName::Math => "math",
            BenchmarkName::Gsm8k => "gsm8k",
            BenchmarkName::Humaneval => "humaneval",
            BenchmarkName::Custom => "custom",
        }
    }

    /// The metric a benchmark is conventionally scored with.
    pub fn default_metric(&self) -> &'static str {
        match self {
            BenchmarkName::Hotpotqa => "f1",
            BenchmarkName::Mbpp | BenchmarkName::Humaneval => "pass_at_1",
            BenchmarkName::Math | BenchmarkName::Gsm8k => "math_equal",
            BenchmarkName::Custom => "exact_match",
        }
    }
}

impl std::str::FromStr for BenchmarkName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hotpotqa" => Ok(BenchmarkName::Hotpotqa),
            "mbpp" => Ok(BenchmarkName::Mbpp),
            "math" => Ok(BenchmarkName::Math),
            "gsm8k" => Ok(BenchmarkName::Gsm8k),
            "humaneval" => Ok(BenchmarkName::Humaneval),
            "custom" => Ok(BenchmarkName::Custom),
            other => Err(format!("unknown benchmark {other:?}")),
        }
    }
}

impl std::fmt::Display for BenchmarkName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ground truth for one example: an answer text, or the assertion suite a
/// generated program must pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Answer(String),
    Tests(Vec<String>),
}

impl Gold {
    pub fn answer_text(&self) -> String {
        match self {
            Gold::Answer(text) => text.clone(),
            Gold::Tests(tests) => tests.join("\n"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub id: String,
    pub inputs: ValueMap,
    pub gold: Gold,
    #[serde(default)]
    pub metadata: ValueMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub name: BenchmarkName,
    pub splits: BTreeMap<Split, Vec<TaskExample>>,
    pub default_metric: String,
}

impl Benchmark {
    pub fn split(&self, split: Split) -> &[TaskExample] {
        self.splits.get(&split).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn n(&self, split: Split) -> usize {
        self.split(split).len()
    }
}

// === JSONL loading ===

/// Loads `<dir>/<split>.jsonl` for each requested split, parsing every line
/// per the benchmark's schema. Any malformed line fails the load with its
/// line number.
pub fn load_benchmark(
    name: BenchmarkName,
    dir: impl AsRef<Path>,
    splits: &[Split],
) -> Result<Benchmark, EvalError> {
    let dir = dir.as_ref();
    let mut loaded = BTreeMap::new();
    for split in splits {
        let path = dir.join(format!("{}.jsonl", split.as_str()));
        if !path.exists() {
            return Err(EvalError::FileNotFound(path));
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|source| EvalError::Io { path: path.clone(), source })?;
        let mut examples = Vec::new();
        let mut seen_ids = BTreeSet::new();
        for (index, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = index + 1;
            let example = parse_example(name, line).map_err(|message| EvalError::Schema {
                path: path.clone(),
                line: line_no,
                message,
            })?;
            if !seen_ids.insert(example.id.clone()) {
                return Err(EvalError::Schema {
                    path: path.clone(),
                    line: line_no,
                    message: format!("duplicate id {:?}", example.id),
                });
            }
            examples.push(example);
        }
        loaded.insert(*split, examples);
    }
    Ok(Benchmark { name, splits: loaded, default_metric: name.default_metric().to_string() })
}

fn parse_example(name: BenchmarkName, line: &str) -> Result<TaskExample, String> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| format!("not a JSON object: {e}"))?;
    let object = value.as_object().ok_or("line is not a JSON object")?;

    let id = match object.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err("field \"id\" must be a string".into()),
        None => return Err("missing field \"id\"".into()),
    };

    let text_field = |field: &str| -> Result<String, String> {
        match object.get(field) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(format!("field {field:?} must be a string")),
            None => Err(format!("missing field {field:?}")),
        }
    };
    let tests_field = || -> Result<Vec<String>, String> {
        let raw = object.get("tests").ok_or("missing field \"tests\"")?;
        let items = raw.as_array().ok_or("field \"tests\" must be an array")?;
        let tests: Vec<String> = items
            .iter()
            .map(|t| t.as_str().map(str::to_string).ok_or("tests entries must be strings"))
            .collect::<Result<_, _>>()?;
        if tests.is_empty() {
            return Err("code tasks need at least one test".into());
        }
        Ok(tests)
    };

    let mut inputs = ValueMap::new();
    let mut metadata = ValueMap::new();
    let gold = match name {
        BenchmarkName::Hotpotqa | BenchmarkName::Gsm8k => {
            inputs.insert("question".into(), Value::String(text_field("question")?));
            Gold::Answer(text_field("answer")?)
        }
        BenchmarkName::Math => {
            inputs.insert("problem".into(), Value::String(text_field("problem")?));
            if let Some(solution) = object.get("solution") {
                metadata.insert("solution".into(), solution.clone());
            }
            Gold::Answer(text_field("boxed_answer")?)
        }
        BenchmarkName::Mbpp => {
            inputs.insert("prompt".into(), Value::String(text_field("prompt")?));
            if let Some(code) = object.get("code") {
                metadata.insert("code".into(), code.clone());
            }
            Gold::Tests(tests_field()?)
        }
        BenchmarkName::Humaneval => {
            inputs.insert("prompt".into(), Value::String(text_field("prompt")?));
            Gold::Tests(tests_field()?)
        }
        BenchmarkName::Custom => {
            let raw_inputs = object
                .get("inputs")
                .and_then(|v| v.as_object())
                .ok_or("missing object field \"inputs\"")?;
            inputs.extend(raw_inputs.iter().map(|(k, v)| (k.clone(), v.clone())));
            if let Some(meta) = object.get("metadata").and_then(|v| v.as_object()) {
                metadata.extend(meta.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
            match object.get("gold") {
                Some(Value::String(s)) => Gold::Answer(s.clone()),
                Some(Value::Array(_)) => Gold::Tests(
                    serde_json::from_value(object["gold"].clone())
                        .map_err(|e| format!("field \"gold\": {e}"))?,
                ),
                Some(other) => Gold::Answer(crate::value_to_text(other)),
                None => return Err("missing field \"gold\"".into()),
            }
        }
    };

    Ok(TaskExample { id, inputs, gold, metadata })
}
