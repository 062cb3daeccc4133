//! Provider-agnostic chat-completion client.
//!
//! Everything the engine says to a model goes through [`LlmClient`], which
//! layers content-addressed response caching and token accounting over a
//! [`ChatProvider`]. Two providers exist: [`HttpProvider`] speaks the
//! de-facto open chat-completions JSON protocol with retry/backoff, and
//! [`ScriptedProvider`] replays fixture responses for offline runs.

mod cache;
mod http;
mod scripted;

pub use cache::{CacheRecord, CacheStore};
pub use http::HttpProvider;
pub use scripted::{Matcher, ScriptFixture, ScriptRule, ScriptedProvider};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Sampling temperature for code generation / translation requests.
pub const GENERATION_TEMPERATURE: f64 = 0.0;
/// Sampling temperature for prompt and data mutation requests.
pub const MUTATION_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>, temperature: f64) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature,
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(LlmError::InvalidRequest(
                "last message must have role user".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if let Some(0) = self.max_tokens {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// Canonical preimage of the cache key. Built from the serde_json
    /// rendering of the request so that serializing and re-parsing a
    /// request yields the same key.
    pub fn key_preimage(&self, endpoint: &str) -> String {
        let body = serde_json::to_string(self).expect("request serializes");
        format!("{endpoint}\n{body}")
    }

    /// Stable digest of (endpoint, model, messages, temperature,
    /// max_tokens), as a hex string.
    pub fn cache_key(&self, endpoint: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.key_preimage(endpoint).as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// One model response plus its bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// True when the provider reported no usage block and the counts are
    /// the chars/4 estimate.
    pub usage_estimated: bool,
    pub latency_secs: f64,
    pub provider: String,
    pub cached: bool,
    /// Transient-failure retries performed before this response; total
    /// attempts = retries + 1.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key; empty means
    /// the endpoint needs no key.
    pub api_key_env: String,
    pub max_retries: u32,
    pub backoff_base_secs: f64,
    pub request_timeout_secs: f64,
    /// Token-bucket rate limit; `None` disables limiting.
    pub requests_per_minute: Option<u32>,
    /// When true, requests with temperature > 0 also go through the cache.
    pub cache_sampling: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 3,
            backoff_base_secs: 0.5,
            request_timeout_secs: 120.0,
            requests_per_minute: None,
            cache_sampling: false,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.request_timeout_secs <= 0.0 {
            return Err(LlmError::InvalidRequest(
                "provider.request_timeout_secs must be > 0".into(),
            ));
        }
        if self.backoff_base_secs < 0.0 {
            return Err(LlmError::InvalidRequest(
                "provider.backoff_base_secs must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("retries exhausted after {attempts} attempts; last failure: {last}")]
    RateLimitedExhausted { attempts: u32, last: String },
    #[error("request timed out ({0})")]
    Timeout(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("no scripted response for request: {0}")]
    NoScriptedResponse(String),
    #[error("cache record corrupt for key {0}")]
    CacheCorrupt(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("cache io error: {0}")]
    CacheIo(#[from] std::io::Error),
}

/// chars/4 heuristic used when a provider reports no usage block.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64 + 3) / 4
}

pub fn estimate_prompt_tokens(request: &ChatRequest) -> u64 {
    request
        .messages
        .iter()
        .map(|m| estimate_tokens(&m.content))
        .sum()
}

/// A source of chat completions. Implementations must be safe to share
/// across worker threads.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError>;

    /// Identity recorded on completions and mixed into cache keys.
    fn cache_scope(&self) -> String;

    /// Model name put into outgoing requests.
    fn model_name(&self) -> String;

    /// Network round trips performed so far. Scripted providers always
    /// report zero.
    fn network_calls(&self) -> u64;
}

/// Aggregate usage over a client's lifetime. Cache hits do not add to the
/// token counters; they are tallied separately.
#[derive(Debug, Default, Clone, Copy, Serialize, Deserialize)]
pub struct UsageTotals {
    pub requests: u64,
    pub cache_hits: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_latency_secs: f64,
}

/// Caching, accounting front door for all engine-issued requests.
pub struct LlmClient {
    provider: Arc<dyn ChatProvider>,
    cache: Option<CacheStore>,
    cache_sampling: bool,
    totals: Mutex<UsageTotals>,
    provider_calls: AtomicU64,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn ChatProvider>, cache: Option<CacheStore>, cache_sampling: bool) -> Self {
        Self {
            provider,
            cache,
            cache_sampling,
            totals: Mutex::new(UsageTotals::default()),
            provider_calls: AtomicU64::new(0),
        }
    }

    /// Client with no cache; every request reaches the provider.
    pub fn direct(provider: Arc<dyn ChatProvider>) -> Self {
        Self::new(provider, None, false)
    }

    pub fn provider(&self) -> &Arc<dyn ChatProvider> {
        &self.provider
    }

    pub fn model_name(&self) -> String {
        self.provider.model_name()
    }

    pub fn cache_scope(&self) -> String {
        self.provider.cache_scope()
    }

    /// Completions served by the underlying provider (cache misses).
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn totals(&self) -> UsageTotals {
        *self.totals.lock().expect("usage totals lock")
    }

    /// Complete a request, consulting the cache when the request is
    /// deterministic (temperature 0) or sampling caching is enabled.
    ///
    /// A corrupt cache record is logged and treated as a miss.
    pub fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        request.validate()?;
        log::debug!(
            "chat request: model={} temperature={} messages={}",
            request.model,
            request.temperature,
            request.messages.len()
        );
        let scope = self.provider.cache_scope();
        let cacheable = request.temperature == 0.0 || self.cache_sampling;
        let key = request.cache_key(&scope);

        if cacheable {
            if let Some(store) = &self.cache {
                match store.load(&key) {
                    Ok(Some(record)) => {
                        let mut completion = record.completion;
                        completion.cached = true;
                        let mut totals = self.totals.lock().expect("usage totals lock");
                        totals.requests += 1;
                        totals.cache_hits += 1;
                        return Ok(completion);
                    }
                    Ok(None) => {}
                    Err(err @ LlmError::CacheCorrupt(_)) => {
                        log::warn!("{err}; treating as cache miss");
                    }
                    Err(err) => return Err(err),
                }
            }
        }

        let completion = self.provider.complete(request)?;
        self.provider_calls.fetch_add(1, Ordering::SeqCst);
        {
            let mut totals = self.totals.lock().expect("usage totals lock");
            totals.requests += 1;
            totals.prompt_tokens += completion.prompt_tokens;
            totals.completion_tokens += completion.completion_tokens;
            totals.total_latency_secs += completion.latency_secs;
        }
        if cacheable {
            if let Some(store) = &self.cache {
                let record = CacheRecord::new(request.key_preimage(&scope), completion.clone());
                if let Err(err) = store.store(&key, &record) {
                    log::warn!("failed to store cache record {key}: {err}");
                }
            }
        }
        Ok(completion)
    }
}
