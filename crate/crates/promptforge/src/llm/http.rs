//! HTTP chat-completions provider.
//!
//! Speaks the open chat-completions protocol: POST `{model, messages,
//! temperature, max_tokens}`, read `choices[0].message.content` and the
//! optional `usage` block. Transient failures (HTTP 429/5xx, timeouts,
//! connection errors) are retried with exponential backoff and full
//! jitter; everything else is terminal. Fields the engine does not set
//! (top_p, penalties) are omitted from the request body entirely.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::json;

use super::{
    estimate_prompt_tokens, estimate_tokens, ChatProvider, ChatRequest, Completion, LlmError,
    ProviderConfig,
};

const BACKOFF_CAP_SECS: f64 = 30.0;

#[derive(Debug)]
pub(crate) struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug)]
pub(crate) enum TransportError {
    Timeout(String),
    Connect(String),
}

/// Wire-level seam; swapped for a scripted transport in tests.
pub(crate) trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError>;
}

struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    fn new() -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| LlmError::InvalidRequest(format!("http client: {e}")))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        let mut builder = self.client.post(url).timeout(timeout).json(body);
        if let Some(token) = bearer {
            builder = builder.bearer_auth(token);
        }
        match builder.send() {
            Ok(resp) => {
                let status = resp.status().as_u16();
                let body = resp.text().unwrap_or_default();
                Ok(HttpReply { status, body })
            }
            Err(err) if err.is_timeout() => Err(TransportError::Timeout(err.to_string())),
            Err(err) => Err(TransportError::Connect(err.to_string())),
        }
    }
}

/// Token bucket: capacity one request, refilled at `rpm/60` per second, so
/// bursts are spaced out evenly.
pub(crate) struct TokenBucket {
    tokens: f64,
    rate_per_sec: f64,
    last: f64,
}

impl TokenBucket {
    pub(crate) fn new(requests_per_minute: u32) -> Self {
        Self {
            tokens: 1.0,
            rate_per_sec: f64::from(requests_per_minute) / 60.0,
            last: 0.0,
        }
    }

    /// Seconds the caller must wait before issuing the request admitted by
    /// this call. Pure in terms of the supplied clock, for testability.
    pub(crate) fn wait_secs(&mut self, now_secs: f64) -> f64 {
        let elapsed = (now_secs - self.last).max(0.0);
        self.tokens = (self.tokens + elapsed * self.rate_per_sec).min(1.0);
        self.last = now_secs;
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            0.0
        } else {
            let wait = (1.0 - self.tokens) / self.rate_per_sec;
            self.tokens = 0.0;
            self.last = now_secs + wait;
            wait
        }
    }
}

enum Outcome {
    Success(Completion),
    Terminal(LlmError),
    Retryable(RetryCause),
}

#[derive(Debug, Clone)]
enum RetryCause {
    Status(u16),
    Timeout(String),
    Connect(String),
}

pub struct HttpProvider {
    config: ProviderConfig,
    transport: Box<dyn Transport>,
    limiter: Option<Mutex<TokenBucket>>,
    epoch: Instant,
    calls: AtomicU64,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let transport = Box::new(ReqwestTransport::new()?);
        Ok(Self::with_transport(config, transport))
    }

    pub(crate) fn with_transport(config: ProviderConfig, transport: Box<dyn Transport>) -> Self {
        let limiter = config
            .requests_per_minute
            .filter(|&rpm| rpm > 0)
            .map(|rpm| Mutex::new(TokenBucket::new(rpm)));
        Self {
            config,
            transport,
            limiter,
            epoch: Instant::now(),
            calls: AtomicU64::new(0),
        }
    }

    fn resolve_api_key(&self) -> Result<Option<String>, LlmError> {
        if self.config.api_key_env.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.config.api_key_env) {
            Ok(key) if !key.is_empty() => Ok(Some(key)),
            _ => Err(LlmError::Auth(format!(
                "environment variable {} is not set",
                self.config.api_key_env
            ))),
        }
    }

    fn throttle(&self) {
        if let Some(limiter) = &self.limiter {
            let now = self.epoch.elapsed().as_secs_f64();
            let wait = limiter.lock().expect("rate limiter lock").wait_secs(now);
            if wait > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(wait));
            }
        }
    }

    fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(max_tokens) = request.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        body
    }

    fn attempt(&self, request: &ChatRequest, bearer: Option<&str>) -> Outcome {
        let body = self.request_body(request);
        let timeout = Duration::from_secs_f64(self.config.request_timeout_secs);
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self
            .transport
            .post_json(&self.config.endpoint_url, bearer, &body, timeout)
        {
            Ok(reply) => self.classify_reply(request, reply),
            Err(TransportError::Timeout(msg)) => Outcome::Retryable(RetryCause::Timeout(msg)),
            Err(TransportError::Connect(msg)) => Outcome::Retryable(RetryCause::Connect(msg)),
        }
    }

    fn classify_reply(&self, request: &ChatRequest, reply: HttpReply) -> Outcome {
        match reply.status {
            200 => match self.parse_success(request, &reply.body) {
                Ok(completion) => Outcome::Success(completion),
                Err(err) => Outcome::Terminal(err),
            },
            401 | 403 => Outcome::Terminal(LlmError::Auth(format!(
                "status {}: {}",
                reply.status,
                snippet(&reply.body)
            ))),
            429 => Outcome::Retryable(RetryCause::Status(429)),
            status if (500..=599).contains(&status) => {
                Outcome::Retryable(RetryCause::Status(status))
            }
            status => Outcome::Terminal(LlmError::Malformed(format!(
                "unexpected status {status}: {}",
                snippet(&reply.body)
            ))),
        }
    }

    fn parse_success(&self, request: &ChatRequest, body: &str) -> Result<Completion, LlmError> {
        let value: serde_json::Value =
            serde_json::from_str(body).map_err(|e| LlmError::Malformed(format!("bad json: {e}")))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                LlmError::Malformed("response has no choices[0].message.content".into())
            })?
            .to_string();
        let usage = value.get("usage");
        let prompt_tokens = usage.and_then(|u| u.get("prompt_tokens")).and_then(|v| v.as_u64());
        let completion_tokens = usage
            .and_then(|u| u.get("completion_tokens"))
            .and_then(|v| v.as_u64());
        let usage_estimated = prompt_tokens.is_none() || completion_tokens.is_none();
        Ok(Completion {
            prompt_tokens: prompt_tokens.unwrap_or_else(|| estimate_prompt_tokens(request)),
            completion_tokens: completion_tokens.unwrap_or_else(|| estimate_tokens(&text)),
            text,
            usage_estimated,
            latency_secs: 0.0,
            provider: self.config.model.clone(),
            cached: false,
            retries: 0,
        })
    }

    fn backoff_delay(&self, retry_index: u32) -> Duration {
        let ceiling = (self.config.backoff_base_secs * 2f64.powi(retry_index as i32))
            .min(BACKOFF_CAP_SECS);
        // full jitter: uniform in [0, ceiling]
        let jittered = if ceiling > 0.0 {
            rand::rng().random_range(0.0..=ceiling)
        } else {
            0.0
        };
        Duration::from_secs_f64(jittered)
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        request.validate()?;
        let bearer = self.resolve_api_key()?;
        let start = Instant::now();
        let mut retries = 0u32;
        loop {
            self.throttle();
            match self.attempt(request, bearer.as_deref()) {
                Outcome::Success(mut completion) => {
                    completion.latency_secs = start.elapsed().as_secs_f64();
                    completion.retries = retries;
                    return Ok(completion);
                }
                Outcome::Terminal(err) => return Err(err),
                Outcome::Retryable(cause) => {
                    if retries >= self.config.max_retries {
                        let attempts = retries + 1;
                        return Err(match cause {
                            RetryCause::Status(status) => LlmError::RateLimitedExhausted {
                                attempts,
                                last: format!("http status {status}"),
                            },
                            RetryCause::Timeout(msg) => LlmError::Timeout(msg),
                            RetryCause::Connect(msg) => LlmError::Timeout(format!(
                                "connection failed: {msg}"
                            )),
                        });
                    }
                    let delay = self.backoff_delay(retries);
                    log::debug!(
                        "retrying request after {:?} (cause: {cause:?}, retry {})",
                        delay,
                        retries + 1
                    );
                    std::thread::sleep(delay);
                    retries += 1;
                }
            }
        }
    }

    fn cache_scope(&self) -> String {
        self.config.endpoint_url.clone()
    }

    fn model_name(&self) -> String {
        self.config.model.clone()
    }

    fn network_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

fn snippet(body: &str) -> String {
    body.chars().take(200).collect()
}
