//! Gateway to the proposer, solver, auxiliary and judge models.
//!
//! Every model sits behind the same chat-completion interface
//! ([`ChatEndpoint`]). The [`Gateway`] adds bounded retries with exponential
//! backoff, a parallelism limit, and call counters.

pub mod http;
pub mod parse;
pub mod prompts;
pub mod rollout;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;
use tracing::debug;

pub use http::HttpEndpoint;
pub use parse::{extract_answer, find_block, parse_proposer, BlockParse, ProposerOutput};
pub use rollout::{
    run_multiturn, run_singleturn, RolloutLimits, RolloutTranscript, TerminationReason, Turn,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// Request body of the chat wire protocol. `model` is filled in by the
/// endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, sampling: Sampling) -> Self {
        Self {
            model: String::new(),
            messages,
            temperature: sampling.temperature,
            max_tokens: sampling.max_tokens,
            stop: Vec::new(),
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match self.messages.first() {
            None => Err(PolicyError::InvalidRequest("no messages".into())),
            Some(m) if !matches!(m.role, Role::System | Role::User) => Err(
                PolicyError::InvalidRequest("first message must be system or user".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Sampling {
    /// Reward estimators sample at temperature 1.
    pub const ROLLOUT: Sampling = Sampling {
        temperature: 1.0,
        max_tokens: 1024,
    };
    pub const SINGLE_TURN: Sampling = Sampling {
        temperature: 1.0,
        max_tokens: 128,
    };
    /// Evaluation decodes greedily.
    pub const GREEDY: Sampling = Sampling {
        temperature: 0.0,
        max_tokens: 1024,
    };
}

/// Failure of a single endpoint call.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EndpointError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
}

impl EndpointError {
    pub fn is_transient(&self) -> bool {
        match self {
            EndpointError::Transport(_) => true,
            EndpointError::Status { status, .. } => *status == 429 || *status >= 500,
            EndpointError::Protocol(_) => false,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PolicyError {
    #[error("endpoint unreachable after {attempts} attempts: {last}")]
    Unreachable { attempts: u32, last: String },
    #[error(transparent)]
    Endpoint(EndpointError),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
}

#[async_trait]
pub trait ChatEndpoint: Send + Sync {
    /// Returns the content of the first assistant choice.
    async fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay_ms: 200,
            max_delay_ms: 10_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Proposer,
    Solver,
    Auxiliary,
    Judge,
}

#[derive(Debug, Default)]
pub struct Counters {
    pub chat_calls: AtomicUsize,
    pub single_turn_decodes: AtomicUsize,
    pub judge_calls: AtomicUsize,
    pub retries: AtomicUsize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub chat_calls: usize,
    pub single_turn_decodes: usize,
    pub judge_calls: usize,
    pub retries: usize,
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            chat_calls: self.chat_calls.load(Ordering::SeqCst),
            single_turn_decodes: self.single_turn_decodes.load(Ordering::SeqCst),
            judge_calls: self.judge_calls.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
        }
    }
}

/// Thread-safe access to the four model endpoints.
#[derive(Clone)]
pub struct Gateway {
    proposer: Arc<dyn ChatEndpoint>,
    solver: Arc<dyn ChatEndpoint>,
    auxiliary: Arc<dyn ChatEndpoint>,
    judge: Arc<dyn ChatEndpoint>,
    retry: RetryPolicy,
    permits: Arc<Semaphore>,
    counters: Arc<Counters>,
}

impl Gateway {
    /// The auxiliary scorer shares the solver endpoint unless replaced with
    /// [`Gateway::with_auxiliary`].
    pub fn new(
        proposer: Arc<dyn ChatEndpoint>,
        solver: Arc<dyn ChatEndpoint>,
        judge: Arc<dyn ChatEndpoint>,
        parallelism: usize,
    ) -> Self {
        Self {
            proposer,
            auxiliary: solver.clone(),
            solver,
            judge,
            retry: RetryPolicy::default(),
            permits: Arc::new(Semaphore::new(parallelism.max(1))),
            counters: Arc::new(Counters::default()),
        }
    }

    /// One endpoint for every role.
    pub fn uniform(endpoint: Arc<dyn ChatEndpoint>, parallelism: usize) -> Self {
        Self::new(endpoint.clone(), endpoint.clone(), endpoint, parallelism)
    }

    pub fn with_auxiliary(mut self, auxiliary: Arc<dyn ChatEndpoint>) -> Self {
        self.auxiliary = auxiliary;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    pub(crate) fn note_single_turn(&self) {
        self.counters.single_turn_decodes.fetch_add(1, Ordering::SeqCst);
    }

    fn endpoint(&self, role: ModelRole) -> &Arc<dyn ChatEndpoint> {
        match role {
            ModelRole::Proposer => &self.proposer,
            ModelRole::Solver => &self.solver,
            ModelRole::Auxiliary => &self.auxiliary,
            ModelRole::Judge => &self.judge,
        }
    }

    /// Sends `request` to the endpoint for `role`, retrying transient
    /// failures with exponential backoff.
    pub async fn complete(&self, role: ModelRole, request: &ChatRequest) -> Result<String, PolicyError> {
        request.validate()?;
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        if role == ModelRole::Judge {
            self.counters.judge_calls.fetch_add(1, Ordering::SeqCst);
        }
        let endpoint = self.endpoint(role);
        let mut attempt = 0;
        loop {
            self.counters.chat_calls.fetch_add(1, Ordering::SeqCst);
            match endpoint.complete(request).await {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() => {
                    attempt += 1;
                    if attempt >= self.retry.max_attempts {
                        return Err(PolicyError::Unreachable {
                            attempts: attempt,
                            last: e.to_string(),
                        });
                    }
                    debug!(?role, attempt, error = %e, "retrying chat call");
                    self.counters.retries.fetch_add(1, Ordering::SeqCst);
                    tokio::time::sleep(self.retry.delay(attempt - 1)).await;
                }
                Err(e) => return Err(PolicyError::Endpoint(e)),
            }
        }
    }
}
