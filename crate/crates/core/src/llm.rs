//! Chat-completions client with retry, usage accounting and a scripted
//! mock transport.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::PromptBundle;
use crate::memory::AgentRole;

pub const API_KEY_ENV: &str = "FEATFORGE_API_KEY";

/// Rough token count: four characters per token.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    /// Prompt size limit in estimated tokens.
    pub token_budget: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".to_string(),
            model: "gpt-3.5-turbo".to_string(),
            temperature: 0.2,
            max_tokens: 512,
            timeout_secs: 60,
            max_retries: 3,
            backoff_base_ms: 1000,
            token_budget: 6000,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 || self.token_budget == 0 {
            return Err(LlmError::InvalidConfig(
                "token limits must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Failure of a single request.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited,
    #[error("http status {status}: {message}")]
    Http { status: u16, message: String },
    #[error("network error: {0}")]
    Network(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::RateLimited | TransportError::Network(_) => {
                true
            }
            TransportError::Http { status, .. } => *status >= 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("invalid llm config: {0}")]
    InvalidConfig(String),
    #[error("prompt of {tokens} tokens exceeds budget {budget}")]
    OverBudget { tokens: usize, budget: usize },
    #[error("http error: {0}")]
    HttpError(TransportError),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: TransportError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl ChatRequest {
    pub fn new(config: &LlmConfig, bundle: &PromptBundle) -> Self {
        Self {
            model: config.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: bundle.system.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: bundle.user.clone(),
                },
            ],
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, role: AgentRole, request: &ChatRequest) -> Result<String, TransportError>;

    /// Simulated transports skip real backoff sleeps.
    fn simulated(&self) -> bool {
        false
    }
}

/// HTTP transport for an OpenAI-compatible endpoint.
pub struct LiveTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl LiveTransport {
    /// Reads the API key from the environment.
    pub fn new(config: &LlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: format!("{}/chat/completions", config.endpoint.trim_end_matches('/')),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }
}

impl Transport for LiveTransport {
    fn send(&self, _role: AgentRole, request: &ChatRequest) -> Result<String, TransportError> {
        let mut builder = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = builder.send_json(request).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Network(other.to_string()),
        })?;
        let status = response.status().as_u16();
        if status == 429 {
            return Err(TransportError::RateLimited);
        }
        if !(200..300).contains(&status) {
            let message = response.body_mut().read_to_string().unwrap_or_default();
            return Err(TransportError::Http { status, message });
        }
        let body: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::Http {
                status,
                message: "response has no choices[0].message.content".into(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    RateLimited,
    Timeout,
    Http(u16),
}

impl MockReply {
    pub fn text(s: impl Into<String>) -> Self {
        MockReply::Text(s.into())
    }
}

type Responder = dyn Fn(AgentRole, usize, &ChatRequest) -> MockReply + Send + Sync;

/// Replies keyed by role and per-role call index. A role's script is
/// followed by its repeating tail, if any.
#[derive(Clone, Default)]
pub struct MockTransport {
    scripts: HashMap<AgentRole, (Vec<MockReply>, Vec<MockReply>)>,
    responder: Option<Arc<Responder>>,
    calls: Arc<Mutex<HashMap<AgentRole, usize>>>,
    log: Arc<Mutex<Vec<(AgentRole, ChatRequest)>>>,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(mut self, role: AgentRole, replies: Vec<MockReply>) -> Self {
        self.scripts.entry(role).or_default().0 = replies;
        self
    }

    pub fn repeat(mut self, role: AgentRole, replies: Vec<MockReply>) -> Self {
        self.scripts.entry(role).or_default().1 = replies;
        self
    }

    /// Computes replies for roles without a script.
    pub fn responder<F>(mut self, f: F) -> Self
    where
        F: Fn(AgentRole, usize, &ChatRequest) -> MockReply + Send + Sync + 'static,
    {
        self.responder = Some(Arc::new(f));
        self
    }

    pub fn calls(&self, role: AgentRole) -> usize {
        self.calls.lock().unwrap().get(&role).copied().unwrap_or(0)
    }

    pub fn requests(&self) -> Vec<(AgentRole, ChatRequest)> {
        self.log.lock().unwrap().clone()
    }
}

impl Transport for MockTransport {
    fn send(&self, role: AgentRole, request: &ChatRequest) -> Result<String, TransportError> {
        let index = {
            let mut calls = self.calls.lock().unwrap();
            let c = calls.entry(role).or_insert(0);
            *c += 1;
            *c - 1
        };
        self.log.lock().unwrap().push((role, request.clone()));
        let reply = match self.scripts.get(&role) {
            Some((script, _)) if index < script.len() => script[index].clone(),
            Some((script, tail)) if !tail.is_empty() => {
                tail[(index - script.len()) % tail.len()].clone()
            }
            _ => match &self.responder {
                Some(f) => f(role, index, request),
                None => MockReply::Http(404),
            },
        };
        match reply {
            MockReply::Text(s) => Ok(s),
            MockReply::RateLimited => Err(TransportError::RateLimited),
            MockReply::Timeout => Err(TransportError::Timeout),
            MockReply::Http(status) => Err(TransportError::Http {
                status,
                message: "mock".into(),
            }),
        }
    }

    fn simulated(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmStats {
    pub calls: usize,
    pub attempts: usize,
    pub retries: usize,
    pub failures: usize,
    pub prompt_tokens: usize,
    pub reply_tokens: usize,
    pub backoff_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

pub struct LlmClient {
    config: LlmConfig,
    transport: Arc<dyn Transport>,
    stats: Mutex<LlmStats>,
    jitter: Mutex<ChaCha8Rng>,
}

impl LlmClient {
    pub fn new(
        config: LlmConfig,
        transport: Arc<dyn Transport>,
        seed: u64,
    ) -> Result<Self, LlmError> {
        config.validate()?;
        Ok(Self {
            config,
            transport,
            stats: Mutex::new(LlmStats::default()),
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn stats(&self) -> LlmStats {
        *self.stats.lock().unwrap()
    }

    /// Backoff before retry `attempt` (0-based): base · 2^attempt, plus up
    /// to 25% jitter.
    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_base_ms as f64 * 2f64.powi(attempt as i32);
        let jitter: f64 = self.jitter.lock().unwrap().gen_range(0.0..0.25);
        Duration::from_millis((base * (1.0 + jitter)) as u64)
    }

    pub fn complete(&self, role: AgentRole, bundle: &PromptBundle) -> Result<Completion, LlmError> {
        let prompt_tokens = bundle.estimated_tokens();
        if prompt_tokens > self.config.token_budget {
            return Err(LlmError::OverBudget {
                tokens: prompt_tokens,
                budget: self.config.token_budget,
            });
        }
        let request = ChatRequest::new(&self.config, bundle);
        self.stats.lock().unwrap().calls += 1;
        let mut attempt = 0u32;
        loop {
            {
                let mut s = self.stats.lock().unwrap();
                s.attempts += 1;
                s.prompt_tokens += prompt_tokens;
            }
            match self.transport.send(role, &request) {
                Ok(text) => {
                    self.stats.lock().unwrap().reply_tokens += estimate_tokens(&text);
                    return Ok(Completion {
                        text,
                        attempts: attempt + 1,
                    });
                }
                Err(e) if e.retryable() && attempt < self.config.max_retries => {
                    let wait = self.backoff(attempt);
                    log::warn!("{role} request failed ({e}); retrying in {wait:?}");
                    {
                        let mut s = self.stats.lock().unwrap();
                        s.retries += 1;
                        s.backoff_ms += wait.as_millis() as u64;
                    }
                    if !self.transport.simulated() {
                        std::thread::sleep(wait);
                    }
                    attempt += 1;
                }
                Err(e) => {
                    self.stats.lock().unwrap().failures += 1;
                    return Err(if e.retryable() {
                        LlmError::RetriesExhausted {
                            attempts: attempt + 1,
                            last: e,
                        }
                    } else {
                        LlmError::HttpError(e)
                    });
                }
            }
        }
    }
}
