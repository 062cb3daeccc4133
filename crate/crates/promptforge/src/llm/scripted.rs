//! Deterministic scripted provider for offline runs and tests.
//!
//! A fixture is an ordered list of rules, each pairing a matcher with an
//! ordered response list. A request is answered by the first rule whose
//! matcher accepts it; that rule's next unused response is returned. A
//! matched rule with an exhausted list is an error, not a fall-through, so
//! fixture mistakes surface loudly.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    estimate_prompt_tokens, estimate_tokens, ChatProvider, ChatRequest, Completion, LlmError,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    /// Matches when the last user message equals the value exactly.
    Exact(String),
    /// Matches when the value occurs anywhere in the last user message.
    Substring(String),
}

impl Matcher {
    fn matches(&self, request: &ChatRequest) -> bool {
        let Some(last_user) = request.last_user_message() else {
            return false;
        };
        match self {
            Matcher::Exact(value) => last_user == value,
            Matcher::Substring(value) => last_user.contains(value),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptFixture {
    pub rules: Vec<ScriptRule>,
}

impl ScriptFixture {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))
    }

    pub fn rule(matcher: Matcher, responses: Vec<&str>) -> ScriptRule {
        ScriptRule {
            matcher,
            responses: responses.into_iter().map(String::from).collect(),
        }
    }
}

pub struct ScriptedProvider {
    rules: Vec<ScriptRule>,
    /// Next unused response index per rule.
    cursors: Mutex<Vec<usize>>,
    scripted_calls: AtomicU64,
}

impl ScriptedProvider {
    pub fn new(fixture: ScriptFixture) -> Self {
        let cursors = Mutex::new(vec![0; fixture.rules.len()]);
        Self {
            rules: fixture.rules,
            cursors,
            scripted_calls: AtomicU64::new(0),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Ok(Self::new(ScriptFixture::from_path(path)?))
    }

    /// Completions served so far (fixture consumption, not network).
    pub fn scripted_calls(&self) -> u64 {
        self.scripted_calls.load(Ordering::SeqCst)
    }

    fn summarize(request: &ChatRequest) -> String {
        let last = request.last_user_message().unwrap_or("");
        let head: String = last.chars().take(80).collect();
        format!("temperature={} last_user={head:?}", request.temperature)
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let start = Instant::now();
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let Some(rule_idx) = self.rules.iter().position(|r| r.matcher.matches(request)) else {
            return Err(LlmError::NoScriptedResponse(Self::summarize(request)));
        };
        let cursor = cursors[rule_idx];
        let Some(text) = self.rules[rule_idx].responses.get(cursor) else {
            return Err(LlmError::NoScriptedResponse(format!(
                "rule {rule_idx} exhausted after {cursor} responses; {}",
                Self::summarize(request)
            )));
        };
        cursors[rule_idx] += 1;
        self.scripted_calls.fetch_add(1, Ordering::SeqCst);
        Ok(Completion {
            text: text.clone(),
            prompt_tokens: estimate_prompt_tokens(request),
            completion_tokens: estimate_tokens(text),
            usage_estimated: true,
            latency_secs: start.elapsed().as_secs_f64(),
            provider: "scripted".into(),
            cached: false,
            retries: 0,
        })
    }

    fn cache_scope(&self) -> String {
        "scripted".into()
    }

    fn model_name(&self) -> String {
        "scripted".into()
    }

    fn network_calls(&self) -> u64 {
        0
    }
}
