//! Provider-agnostic LLM invocation.
//!
//! One wire dialect (the OpenAI chat-completions shape) covers every HTTP
//! provider via `base_url` redirection; a scripted mock provider covers
//! offline and deterministic test runs. All calls are accounted in a usage
//! ledger owned by the client.

mod ledger;
mod mock;
mod openai;

pub use ledger::{estimate_cost, LedgerEntry, PriceTable, UsageLedger};
pub use mock::{MockRule, MockScript};

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("auth error: {0}")]
    Auth(String),
    #[error("request timed out after {0:.1}s")]
    Timeout(f64),
    #[error("provider error (HTTP {status}): {message}")]
    Provider { status: u16, message: String },
    #[error("rate limited (HTTP 429) after retries")]
    RateLimited,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid llm config: {0}")]
    InvalidConfig(String),
    #[error("unknown llm profile '{0}'")]
    UnknownProfile(String),
}

impl LlmError {
    /// True for failures no retry or different example can fix: bad
    /// credentials, a profile that does not exist, malformed configuration.
    pub fn is_systemic(&self) -> bool {
        matches!(
            self,
            LlmError::Auth(_) | LlmError::UnknownProfile(_) | LlmError::InvalidConfig(_)
        )
    }
}

// =====================================================================
// Configuration
// =====================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    OpenaiCompatible,
    Mock,
}

pub const DEFAULT_OPENAI_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

/// One named LLM profile: which provider to call and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LLMConfig {
    #[serde(default = "default_provider")]
    pub provider: Provider,
    pub model: String,
    /// Endpoint root for `openai_compatible`; `{base_url}/chat/completions` is posted to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key. Keys are never stored inline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub stream: bool,
    /// Per-attempt wall-clock timeout in seconds.
    #[serde(default = "default_request_timeout")]
    pub request_timeout: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_provider() -> Provider {
    Provider::OpenaiCompatible
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_request_timeout() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    2
}

impl LLMConfig {
    pub fn mock(model: &str) -> Self {
        LLMConfig {
            provider: Provider::Mock,
            model: model.to_string(),
            base_url: None,
            api_key_env: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            stream: false,
            request_timeout: default_request_timeout(),
            max_retries: default_max_retries(),
        }
    }

    /// Fills provider-specific defaults left out of a config document.
    pub fn apply_defaults(&mut self) {
        if self.provider == Provider::OpenaiCompatible {
            if self.base_url.is_none() {
                self.base_url = Some(DEFAULT_OPENAI_BASE_URL.to_string());
            }
            if self.api_key_env.is_none() {
                self.api_key_env = Some(DEFAULT_API_KEY_ENV.to_string());
            }
        }
    }

    /// Field-level validation; returns the offending field name and a message.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.model.trim().is_empty() {
            return Err(("model".into(), "model must be non-empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err((
                "temperature".into(),
                format!("temperature {} outside [0, 2]", self.temperature),
            ));
        }
        if self.max_retries > 10 {
            return Err((
                "max_retries".into(),
                format!("max_retries {} outside [0, 10]", self.max_retries),
            ));
        }
        if self.max_tokens == 0 {
            return Err(("max_tokens".into(), "max_tokens must be ≥ 1".into()));
        }
        if self.request_timeout <= 0.0 {
            return Err(("request_timeout".into(), "request_timeout must be > 0".into()));
        }
        if self.provider == Provider::OpenaiCompatible {
            if self.base_url.as_deref().map_or(true, |s| s.trim().is_empty()) {
                return Err(("base_url".into(), "openai_compatible profiles need base_url".into()));
            }
            if self.api_key_env.as_deref().map_or(true, |s| s.trim().is_empty()) {
                return Err((
                    "api_key_env".into(),
                    "openai_compatible profiles need api_key_env".into(),
                ));
            }
        }
        Ok(())
    }
}

// =====================================================================
// Request / response
// =====================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl GenerationRequest {
    /// Single user-message request, the common case.
    pub fn user(content: impl Into<String>) -> Self {
        GenerationRequest {
            messages: vec![ChatMessage { role: Role::User, content: content.into() }],
            temperature: None,
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("messages must be non-empty".into()));
        }
        let last = self.messages.last().unwrap();
        if last.role == Role::Assistant {
            return Err(LlmError::InvalidRequest(
                "last message must have role user or system".into(),
            ));
        }
        Ok(())
    }

    /// The prompt text mock rules match against: message contents joined by newlines.
    pub fn rendered_prompt(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Currency units under the client's price table.
    pub cost: f64,
    /// Seconds spent in this call, retries included.
    pub latency: f64,
    pub provider_model: String,
}

pub(crate) fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

// =====================================================================
// Client
// =====================================================================

const DEFAULT_MAX_IN_FLIGHT: usize = 8;

/// Thread-safe LLM client: dispatches to the configured provider, retries
/// transient failures, enforces a per-model in-flight cap, and records usage.
pub struct LlmClient {
    http: reqwest::blocking::Client,
    mock_script: Option<MockScript>,
    price_table: PriceTable,
    ledger: UsageLedger,
    gates: Mutex<BTreeMap<String, std::sync::Arc<Semaphore>>>,
    max_in_flight: usize,
}

impl Default for LlmClient {
    fn default() -> Self {
        Self::new()
    }
}

impl LlmClient {
    pub fn new() -> Self {
        LlmClient {
            http: reqwest::blocking::Client::new(),
            mock_script: None,
            price_table: PriceTable::with_defaults(),
            ledger: UsageLedger::default(),
            gates: Mutex::new(BTreeMap::new()),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn with_mock_script(mut self, script: MockScript) -> Self {
        self.mock_script = Some(script);
        self
    }

    pub fn with_price_table(mut self, table: PriceTable) -> Self {
        self.price_table = table;
        self
    }

    /// Caps simultaneous provider calls per model (default 8).
    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn mock_script(&self) -> Option<&MockScript> {
        self.mock_script.as_ref()
    }

    pub fn price_table(&self) -> &PriceTable {
        &self.price_table
    }

    /// Aggregated usage for every generate call made through this client.
    pub fn ledger_summary(&self) -> BTreeMap<String, LedgerEntry> {
        self.ledger.summary()
    }

    pub fn generate(
        &self,
        config: &LLMConfig,
        request: &GenerationRequest,
    ) -> Result<GenerationResponse, LlmError> {
        config.validate().map_err(|(field, msg)| LlmError::InvalidConfig(format!("{field}: {msg}")))?;
        request.validate()?;
        match config.provider {
            Provider::Mock => self.generate_mock(config, request),
            Provider::OpenaiCompatible => {
                let gate = self.gate_for(&config.model);
                let _slot = gate.acquire();
                openai::generate(self, config, request)
            }
        }
    }

    fn generate_mock(
        &self,
        config: &LLMConfig,
        request: &GenerationRequest,
    ) -> Result<GenerationResponse, LlmError> {
        let started = Instant::now();
        let prompt = request.rendered_prompt();
        let default_script;
        let script = match &self.mock_script {
            Some(s) => s,
            None => {
                default_script = MockScript::default();
                &default_script
            }
        };
        let (content, delay_ms) = script.respond(&prompt);
        if delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(delay_ms));
        }
        let prompt_tokens = whitespace_tokens(&prompt);
        let completion_tokens = whitespace_tokens(&content);
        let cost = self.price_table.cost(&config.model, prompt_tokens, completion_tokens);
        self.ledger.record_attempt(&config.model);
        self.ledger.record_usage(&config.model, prompt_tokens, completion_tokens, cost);
        Ok(GenerationResponse {
            content,
            prompt_tokens,
            completion_tokens,
            cost,
            latency: started.elapsed().as_secs_f64(),
            provider_model: config.model.clone(),
        })
    }

    pub(crate) fn http(&self) -> &reqwest::blocking::Client {
        &self.http
    }

    pub(crate) fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub(crate) fn table(&self) -> &PriceTable {
        &self.price_table
    }

    fn gate_for(&self, model: &str) -> std::sync::Arc<Semaphore> {
        let mut gates = self.gates.lock().unwrap();
        gates
            .entry(model.to_string())
            .or_insert_with(|| std::sync::Arc::new(Semaphore::new(self.max_in_flight)))
            .clone()
    }
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("mock", &self.mock_script.is_some())
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

/// Counting semaphore for the in-flight request cap.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore { permits: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.sem.permits.lock().unwrap();
        *permits += 1;
        self.sem.cv.notify_one();
    }
}

// =====================================================================
// Environment: client + named profiles
// =====================================================================

/// Execution environment handed to agents, workflows, evaluators and
/// optimizers: one shared client plus the named profiles it may run under.
pub struct LlmEnv {
    pub client: LlmClient,
    pub profiles: BTreeMap<String, LLMConfig>,
}

impl LlmEnv {
    pub fn new(client: LlmClient, profiles: BTreeMap<String, LLMConfig>) -> Self {
        LlmEnv { client, profiles }
    }

    /// Environment with a single "mock" profile driven by `script`.
    pub fn mock_only(script: MockScript) -> Self {
        let mut profiles = BTreeMap::new();
        profiles.insert("mock".to_string(), LLMConfig::mock("mock"));
        LlmEnv { client: LlmClient::new().with_mock_script(script), profiles }
    }

    pub fn profile(&self, name: &str) -> Result<&LLMConfig, LlmError> {
        self.profiles.get(name).ok_or_else(|| LlmError::UnknownProfile(name.to_string()))
    }

    pub fn generate(
        &self,
        profile: &str,
        request: &GenerationRequest,
    ) -> Result<GenerationResponse, LlmError> {
        let config = self.profile(profile)?;
        self.client.generate(config, request)
    }
}

impl std::fmt::Debug for LlmEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmEnv").field("profiles", &self.profiles.keys().collect::<Vec<_>>()).finish()
    }
}
