//! Completion interface over interchangeable backends.
//!
//! [`LlmClient`] owns retry and concurrency policy; a [`CompletionBackend`]
//! only performs one attempt. Two backends ship: [`WireBackend`] speaks the
//! OpenAI-compatible chat-completion protocol, [`MockBackend`] replays
//! fixtures so that every downstream stage runs offline and deterministically.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::error::{Error, Result};

mod mock;
mod wire;

pub use mock::{FixtureRecord, MissPolicy, MockBackend};
pub use wire::{WireBackend, WireConfig};

pub const TAG_CAPTION: &str = "caption";
pub const TAG_EXPAND: &str = "expand";
pub const TAG_RERANK: &str = "rerank";

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
    /// Images attached to a user message (paths or URIs).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
            images: Vec::new(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
            images: Vec::new(),
        }
    }

    pub fn with_images(mut self, images: Vec<String>) -> Self {
        self.images = images;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    /// Stage label (`caption`, `expand`, `rerank`) used for fixtures and accounting.
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    /// Rerank pass index, for fixtures keyed per pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass: Option<u32>,
    /// Sampling seed, forwarded to backends that accept one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(tag: &str, messages: Vec<Message>) -> Self {
        CompletionRequest {
            messages,
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
            tag: tag.to_string(),
            query_id: None,
            pass: None,
            seed: None,
        }
    }

    pub fn sampling(mut self, temperature: f64, top_p: f64, max_tokens: u32) -> Self {
        self.temperature = temperature;
        self.top_p = top_p;
        self.max_tokens = max_tokens;
        self
    }

    pub fn for_query(mut self, query_id: &str) -> Self {
        self.query_id = Some(query_id.to_string());
        self
    }

    pub fn pass(mut self, pass: u32) -> Self {
        self.pass = Some(pass);
        self.seed = Some(u64::from(pass));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::Invalid("completion request has no messages".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Invalid("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Invalid("top_p must lie in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Invalid("max_tokens must be positive".into()));
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
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResult {
    pub text: String,
    pub backend: String,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Timeouts, connection failures, 429 and 5xx responses. Retried.
    Transient,
    /// Other rejections. Not retried.
    Permanent,
    /// A response that does not follow the protocol. Not retried.
    Protocol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendError {
    pub kind: FailureKind,
    pub message: String,
}

impl BackendError {
    pub fn transient(message: impl Into<String>) -> Self {
        BackendError {
            kind: FailureKind::Transient,
            message: message.into(),
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        BackendError {
            kind: FailureKind::Permanent,
            message: message.into(),
        }
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        BackendError {
            kind: FailureKind::Protocol,
            message: message.into(),
        }
    }
}

/// One completion attempt against a concrete backend.
#[async_trait]
pub trait CompletionBackend: Send + Sync {
    fn label(&self) -> &str;
    async fn complete_once(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError>;
}

/// Exponential backoff with jitter: attempt `n` waits a uniform draw from
/// `[delay/2, delay]` where `delay = min(base * 2^(n-1), max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << (attempt - 1).min(16));
        let capped = exp.min(self.max_delay);
        if capped.is_zero() {
            return capped;
        }
        let frac = rand::rng().random_range(0.5..=1.0);
        capped.mul_f64(frac)
    }
}

/// Shareable completion client: retries, a global in-flight bound, and
/// per-tag request counts.
pub struct LlmClient {
    backend: Arc<dyn CompletionBackend>,
    retry: RetryPolicy,
    permits: Arc<Semaphore>,
    calls: Mutex<BTreeMap<String, u64>>,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn CompletionBackend>, max_concurrency: usize) -> Self {
        LlmClient {
            backend,
            retry: RetryPolicy::default(),
            permits: Arc::new(Semaphore::new(max_concurrency.max(1))),
            calls: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend_label(&self) -> &str {
        self.backend.label()
    }

    /// Requests issued so far, keyed by tag.
    pub fn calls_by_tag(&self) -> BTreeMap<String, u64> {
        self.calls.lock().expect("call counter poisoned").clone()
    }

    pub async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult> {
        request.validate()?;
        *self
            .calls
            .lock()
            .expect("call counter poisoned")
            .entry(request.tag.clone())
            .or_default() += 1;
        let _permit = self.permits.acquire().await.expect("semaphore closed");
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.complete_once(request).await {
                Ok(text) => {
                    return Ok(CompletionResult {
                        text,
                        backend: self.backend.label().to_string(),
                        attempt_count: attempt,
                    })
                }
                Err(e) if e.kind == FailureKind::Protocol => return Err(Error::Protocol(e.message)),
                Err(e) if e.kind == FailureKind::Transient && attempt < self.retry.max_attempts => {
                    tracing::debug!(attempt, tag = %request.tag, "transient backend failure: {}", e.message);
                    tokio::time::sleep(self.retry.delay(attempt)).await;
                }
                Err(e) => {
                    return Err(Error::BackendUnavailable {
                        attempts: attempt,
                        cause: e.message,
                    })
                }
            }
        }
    }

    /// Runs `requests` with at most `limit` in flight. `result[i]` answers
    /// `requests[i]`; a failed slot does not affect the others.
    pub async fn run_batch(&self, requests: &[CompletionRequest], limit: usize) -> Vec<Result<CompletionResult>> {
        stream::iter(requests.iter().map(|r| self.complete(r)))
            .buffered(limit.max(1))
            .collect()
            .await
    }
}
