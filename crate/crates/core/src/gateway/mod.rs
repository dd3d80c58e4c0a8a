//! Access to the external model services: chat, vision, embedding, segmentation.
//!
//! Each role is a trait object so hosted services and scripted mocks are
//! interchangeable. Retries and per-attempt timeouts live in the free
//! functions [`chat`] and [`analyze_image`], not in the backends.

mod embed;
mod http;
mod scripted;
mod segment;

pub use embed::{cosine_similarity, embed, EmbeddingVector, HashEmbedder, StaticEmbedder};
pub use http::{
    chat_request_body, embedding_request_body, vision_request_body, HttpChat, HttpEmbedder,
    HttpEndpoint, HttpVision,
};
pub use scripted::{FailKind, Matcher, ScriptRecord, ScriptResponse, ScriptedBackend};
pub use segment::{FileSegmentationStore, SegmentationMasks};

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::Image8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    Precondition(String),
    #[error("no scripted response matches request: {0}")]
    ScriptExhausted(String),
    #[error("unknown segmentation target {0:?}")]
    UnknownTarget(String),
    #[error("unknown case {0:?} in segmentation store")]
    UnknownCase(String),
    #[error("segmentation backend: {0}")]
    Segmentation(String),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

impl GatewayError {
    /// Failures worth another attempt.
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Timeout(_) | GatewayError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
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
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_output_tokens: 2048,
        }
    }

    /// All message contents joined by newlines; what scripted matchers see.
    pub fn transcript(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::Precondition("chat request has no messages".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::Precondition("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::Precondition("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// One visual input for the vision model.
#[derive(Debug, Clone, PartialEq)]
pub enum VisionInput {
    Slice(Image8),
    /// Reference to a (cropped) volume the service resolves itself.
    VolumeRef(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisionRequest {
    pub model: String,
    pub prompt: String,
    pub images: Vec<VisionInput>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl VisionRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>, images: Vec<VisionInput>) -> Self {
        Self {
            model: model.into(),
            prompt: prompt.into(),
            images,
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackendPolicy {
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub retry_backoff: Duration,
}

impl Default for BackendPolicy {
    fn default() -> Self {
        Self {
            request_timeout: Duration::from_secs(120),
            max_retries: 2,
            retry_backoff: Duration::from_millis(500),
        }
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    /// A single attempt; retry policy is applied by [`chat`].
    async fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError>;
}

#[async_trait]
pub trait VisionBackend: Send + Sync {
    async fn analyze(&self, req: &VisionRequest) -> Result<String, GatewayError>;
}

#[async_trait]
pub trait EmbeddingBackend: Send + Sync {
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError>;
}

#[async_trait]
pub trait SegmentationBackend: Send + Sync {
    async fn segment(&self, case_id: &str, targets: &[String]) -> Result<SegmentationMasks, GatewayError>;

    /// Whether masks exist for `case_id`; lets callers reject unknown cases early.
    fn has_case(&self, case_id: &str) -> bool;
}

async fn with_retries<F, Fut>(policy: &BackendPolicy, what: &str, mut attempt: F) -> Result<String, GatewayError>
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Result<String, GatewayError>>,
{
    if policy.request_timeout.is_zero() {
        return Err(GatewayError::Precondition("request timeout must be positive".into()));
    }
    let mut tries = 0u32;
    loop {
        tries += 1;
        let result = match tokio::time::timeout(policy.request_timeout, attempt()).await {
            Ok(r) => r,
            Err(_) => Err(GatewayError::Timeout(policy.request_timeout)),
        };
        match result {
            Ok(text) => {
                tracing::debug!(what, attempts = tries, "backend request succeeded");
                return Ok(text);
            }
            Err(e) if e.is_transient() && tries <= policy.max_retries => {
                tracing::warn!(what, attempt = tries, error = %e, "transient backend failure, retrying");
                let backoff = policy.retry_backoff.saturating_mul(1 << (tries - 1).min(16));
                tokio::time::sleep(backoff).await;
            }
            Err(e) => {
                tracing::warn!(what, attempts = tries, error = %e, "backend request failed");
                return Err(e);
            }
        }
    }
}

/// Sends a chat request with per-attempt timeout and bounded retries.
pub async fn chat(backend: &dyn ChatBackend, req: &ChatRequest, policy: &BackendPolicy) -> Result<String, GatewayError> {
    req.validate()?;
    with_retries(policy, "chat", || backend.complete(req)).await
}

/// Sends a vision request; at least one image is required.
pub async fn analyze_image(
    backend: &dyn VisionBackend,
    req: &VisionRequest,
    policy: &BackendPolicy,
) -> Result<String, GatewayError> {
    if req.images.is_empty() {
        return Err(GatewayError::Precondition("vision request has no images".into()));
    }
    with_retries(policy, "vision", || backend.analyze(req)).await
}

/// The set of backends one case run talks to.
#[derive(Clone)]
pub struct Gateway {
    pub chat: Arc<dyn ChatBackend>,
    pub vision: Arc<dyn VisionBackend>,
    pub embedding: Arc<dyn EmbeddingBackend>,
    pub segmentation: Arc<dyn SegmentationBackend>,
    pub chat_model: String,
    pub vision_model: String,
    pub chat_policy: BackendPolicy,
    pub vision_policy: BackendPolicy,
}

impl Gateway {
    /// Single chat turn against the configured chat model.
    pub async fn chat(&self, messages: Vec<Message>) -> Result<String, GatewayError> {
        let req = ChatRequest::new(self.chat_model.clone(), messages);
        chat(self.chat.as_ref(), &req, &self.chat_policy).await
    }

    pub async fn vision(&self, prompt: String, images: Vec<VisionInput>) -> Result<String, GatewayError> {
        let req = VisionRequest::new(self.vision_model.clone(), prompt, images);
        analyze_image(self.vision.as_ref(), &req, &self.vision_policy).await
    }

    pub async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        embed(self.embedding.as_ref(), texts).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
    }

    #[async_trait]
    impl ChatBackend for Flaky {
        async fn complete(&self, _req: &ChatRequest) -> Result<String, GatewayError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(GatewayError::Transport("connection reset".into()))
            } else {
                Ok("OK".into())
            }
        }
    }

    struct Sleepy;

    #[async_trait]
    impl ChatBackend for Sleepy {
        async fn complete(&self, _req: &ChatRequest) -> Result<String, GatewayError> {
            tokio::time::sleep(Duration::from_secs(3600)).await;
            Ok("late".into())
        }
    }

    fn request() -> ChatRequest {
        ChatRequest::new("m", vec![Message::user("hi")])
    }

    fn policy(max_retries: u32) -> BackendPolicy {
        BackendPolicy {
            request_timeout: Duration::from_secs(5),
            max_retries,
            retry_backoff: Duration::from_millis(10),
        }
    }

    #[tokio::test(start_paused = true)]
    async fn retries_until_success() {
        let b = Flaky { failures: 2, calls: AtomicU32::new(0) };
        assert_eq!(chat(&b, &request(), &policy(3)).await.unwrap(), "OK");
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test(start_paused = true)]
    async fn retries_are_bounded() {
        let b = Flaky { failures: 10, calls: AtomicU32::new(0) };
        let err = chat(&b, &request(), &policy(2)).await.unwrap_err();
        assert!(matches!(err, GatewayError::Transport(_)));
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test(start_paused = true)]
    async fn slow_backend_times_out() {
        let err = chat(&Sleepy, &request(), &policy(0)).await.unwrap_err();
        assert_eq!(err, GatewayError::Timeout(Duration::from_secs(5)));
    }

    #[tokio::test]
    async fn empty_chat_request_rejected() {
        let b = Flaky { failures: 0, calls: AtomicU32::new(0) };
        let req = ChatRequest::new("m", vec![]);
        assert!(matches!(chat(&b, &req, &policy(0)).await, Err(GatewayError::Precondition(_))));
    }
}
