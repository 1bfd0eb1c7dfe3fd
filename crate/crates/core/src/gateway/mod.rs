//! Text-generation gateway.
//!
//! Every agent call goes through [`Gateway`]. Backends:
//!
//! - [`HttpGateway`]: OpenAI-compatible chat completions with bounded retry.
//! - [`RecordingGateway`] / [`ReplayGateway`]: an append-only JSON-lines
//!   store of request/response pairs keyed by a canonical request hash.
//! - [`SyntheticGateway`]: a scripted world for offline statistical tests.
//! - [`MeteredGateway`]: counts calls per tag prefix.

mod http;
mod metered;
mod store;
mod synthetic;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpConfig, HttpGateway, API_KEY_ENV};
pub use metered::MeteredGateway;
pub use store::{RecordEntry, RecordStore, RecordingGateway, ReplayGateway, StoredResponse};
pub use synthetic::{PoolDirection, SyntheticGateway, SyntheticWorld, REFUSAL_TEXT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_sample")]
    pub sample: bool,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_temperature() -> f64 {
    0.8
}
fn default_sample() -> bool {
    true
}
fn default_max_tokens() -> u32 {
    512
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: default_temperature(),
            sample: default_sample(),
            max_tokens: default_max_tokens(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub params: GenerationParams,
    /// Trace label such as `navigator/expand/depth2`. Not part of the cache key.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>, params: GenerationParams, tag: impl Into<String>) -> Self {
        ChatRequest { messages, params, tag: tag.into() }
    }

    /// At least one message; after an optional leading system message the
    /// roles alternate user/assistant.
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("request has no messages".into()));
        }
        if self.params.temperature.is_nan() || self.params.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        let body = match self.messages[0].role {
            Role::System => &self.messages[1..],
            _ => &self.messages[..],
        };
        let mut expect = Role::User;
        for (i, m) in body.iter().enumerate() {
            if m.role != expect {
                return Err(GatewayError::InvalidRequest(format!(
                    "message {i} after system prompt has role {:?}, expected {:?}",
                    m.role, expect
                )));
            }
            expect = if expect == Role::User { Role::Assistant } else { Role::User };
        }
        Ok(())
    }

    /// The final user message, which carries the task instance.
    pub fn last_user_content(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub backend_id: String,
    pub cached: bool,
    #[serde(skip)]
    pub latency: Duration,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no recorded response for request {key}")]
    CacheMiss { key: String },
    #[error("malformed upstream payload: {0}")]
    MalformedUpstream(String),
    #[error("record store corrupt: {0}")]
    StoreCorrupt(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl GatewayError {
    pub fn is_transport(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    messages: &'a [Message],
    params: &'a GenerationParams,
}

/// Canonical cache key: SHA-256 over the compact JSON of messages and params.
///
/// Computed from the parsed structure, so any re-serialization of the same
/// request maps to the same key. The tag is excluded.
pub fn cache_key(request: &ChatRequest) -> String {
    let material = KeyMaterial { messages: &request.messages, params: &request.params };
    let bytes = serde_json::to_vec(&material).expect("request serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub trait Gateway: Send + Sync {
    fn backend_id(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    /// Issues the requests concurrently; results stay in request order and a
    /// failed item does not affect its siblings.
    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        if requests.len() <= 1 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = requests.iter().map(|r| scope.spawn(move || self.complete(r))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(GatewayError::Transport("worker panicked".into()))))
                .collect()
        })
    }
}

impl<G: Gateway + ?Sized> Gateway for &G {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        (**self).complete_batch(requests)
    }
}

impl<G: Gateway + ?Sized> Gateway for Box<G> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        (**self).complete_batch(requests)
    }
}

impl<G: Gateway + ?Sized> Gateway for std::sync::Arc<G> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        (**self).complete_batch(requests)
    }
}
