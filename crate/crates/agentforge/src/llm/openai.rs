//! OpenAI-compatible chat-completions client.
//!
//! POSTs `{base_url}/chat/completions` with bearer auth. Transient failures
//! (timeouts, connection errors, HTTP 429/5xx) are retried with exponential
//! backoff up to `max_retries`, so total attempts ≤ max_retries + 1. Auth
//! problems fail immediately, before any network traffic when the key
//! environment variable is unset.

use std::io::{BufRead, BufReader};
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{
    whitespace_tokens, GenerationRequest, GenerationResponse, LLMConfig, LlmClient, LlmError,
};

const BACKOFF_BASE_MS: u64 = 100;
const BACKOFF_CAP_MS: u64 = 2_000;

pub(super) fn generate(
    client: &LlmClient,
    config: &LLMConfig,
    request: &GenerationRequest,
) -> Result<GenerationResponse, LlmError> {
    let key_env = config.api_key_env.as_deref().expect("validated config");
    let api_key = std::env::var(key_env)
        .ok()
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| LlmError::Auth(format!("environment variable {key_env} is not set")))?;

    let base = config.base_url.as_deref().expect("validated config");
    let url = format!("{}/chat/completions", base.trim_end_matches('/'));
    let body = serde_json::json!({
        "model": config.model,
        "messages": request.messages,
        "temperature": request.temperature.unwrap_or(config.temperature),
        "max_tokens": request.max_tokens.unwrap_or(config.max_tokens),
        "stream": config.stream,
    });

    let started = Instant::now();
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        client.ledger().record_attempt(&config.model);
        match attempt_once(client, config, &url, &api_key, &body) {
            Ok(raw) => {
                let prompt_tokens = raw
                    .prompt_tokens
                    .unwrap_or_else(|| whitespace_tokens(&request.rendered_prompt()));
                let completion_tokens =
                    raw.completion_tokens.unwrap_or_else(|| whitespace_tokens(&raw.content));
                let cost = client.table().cost(&config.model, prompt_tokens, completion_tokens);
                client.ledger().record_usage(&config.model, prompt_tokens, completion_tokens, cost);
                return Ok(GenerationResponse {
                    content: raw.content,
                    prompt_tokens,
                    completion_tokens,
                    cost,
                    latency: started.elapsed().as_secs_f64(),
                    provider_model: config.model.clone(),
                });
            }
            Err(Attempt::Fatal(err)) => return Err(err),
            Err(Attempt::Transient(err)) => {
                if attempt > config.max_retries {
                    return Err(err);
                }
                let backoff =
                    (BACKOFF_BASE_MS << (attempt - 1).min(10)).min(BACKOFF_CAP_MS);
                log::debug!(
                    "retrying {} after transient failure (attempt {attempt}): {err}",
                    config.model
                );
                std::thread::sleep(Duration::from_millis(backoff));
            }
        }
    }
}

enum Attempt {
    Transient(LlmError),
    Fatal(LlmError),
}

struct RawCompletion {
    content: String,
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct StreamChunk {
    #[serde(default)]
    choices: Vec<StreamChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct StreamChoice {
    #[serde(default)]
    delta: Delta,
}

#[derive(Deserialize, Default)]
struct Delta {
    #[serde(default)]
    content: Option<String>,
}

fn attempt_once(
    client: &LlmClient,
    config: &LLMConfig,
    url: &str,
    api_key: &str,
    body: &serde_json::Value,
) -> Result<RawCompletion, Attempt> {
    let result = client
        .http()
        .post(url)
        .bearer_auth(api_key)
        .timeout(Duration::from_secs_f64(config.request_timeout))
        .json(body)
        .send();

    let response = match result {
        Ok(r) => r,
        Err(e) if e.is_timeout() => {
            return Err(Attempt::Transient(LlmError::Timeout(config.request_timeout)))
        }
        Err(e) => return Err(Attempt::Transient(LlmError::Transport(e.to_string()))),
    };

    let status = response.status();
    if status.is_success() {
        if config.stream {
            return aggregate_sse(response).map_err(Attempt::Fatal);
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| Attempt::Fatal(provider_err(status.as_u16(), format!("bad body: {e}"))))?;
        let choice = parsed.choices.into_iter().next().ok_or_else(|| {
            Attempt::Fatal(provider_err(status.as_u16(), "response had no choices".into()))
        })?;
        return Ok(RawCompletion {
            content: choice.message.content.unwrap_or_default(),
            prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().and_then(|u| u.completion_tokens),
        });
    }

    let code = status.as_u16();
    let text = response.text().unwrap_or_default();
    let short: String = text.chars().take(240).collect();
    match code {
        401 | 403 => Err(Attempt::Fatal(LlmError::Auth(format!("provider rejected key (HTTP {code})")))),
        429 => Err(Attempt::Transient(LlmError::RateLimited)),
        500..=599 => Err(Attempt::Transient(provider_err(code, short))),
        _ => Err(Attempt::Fatal(provider_err(code, short))),
    }
}

fn provider_err(status: u16, message: String) -> LlmError {
    LlmError::Provider { status, message }
}

/// Collects `data: {...}` server-sent-event lines into the final content.
fn aggregate_sse(response: reqwest::blocking::Response) -> Result<RawCompletion, LlmError> {
    let mut content = String::new();
    let mut prompt_tokens = None;
    let mut completion_tokens = None;
    let reader = BufReader::new(response);
    for line in reader.lines() {
        let line = line.map_err(|e| LlmError::Transport(format!("stream read: {e}")))?;
        let Some(data) = line.strip_prefix("data:") else { continue };
        let data = data.trim();
        if data.is_empty() {
            continue;
        }
        if data == "[DONE]" {
            break;
        }
        let chunk: StreamChunk = serde_json::from_str(data)
            .map_err(|e| provider_err(200, format!("bad stream chunk: {e}")))?;
        if let Some(choice) = chunk.choices.first() {
            if let Some(piece) = &choice.delta.content {
                content.push_str(piece);
            }
        }
        if let Some(usage) = chunk.usage {
            prompt_tokens = usage.prompt_tokens.or(prompt_tokens);
            completion_tokens = usage.completion_tokens.or(completion_tokens);
        }
    }
    Ok(RawCompletion { content, prompt_tokens, completion_tokens })
}
