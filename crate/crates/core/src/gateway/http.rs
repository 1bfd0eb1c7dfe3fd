use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ChatRequest, ChatResponse, Gateway, GatewayError, Message};

/// Environment variable holding the bearer token for the HTTP backend.
pub const API_KEY_ENV: &str = "MIRROR_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

/// OpenAI-compatible chat-completions backend.
pub struct HttpGateway {
    config: HttpConfig,
    endpoint: String,
    client: reqwest::blocking::Client,
    id: String,
}

enum Attempt {
    Retry(GatewayError),
    Fatal(GatewayError),
}

impl HttpGateway {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let endpoint = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let id = format!("http:{}", config.model);
        Ok(HttpGateway { config, endpoint, client, id })
    }

    pub fn wire_body(&self, request: &ChatRequest) -> Value {
        let p = &request.params;
        let body = WireRequest {
            model: &self.config.model,
            messages: &request.messages,
            // greedy decoding when sampling is switched off
            temperature: if p.sample { p.temperature } else { 0.0 },
            max_tokens: p.max_tokens,
            seed: p.seed,
        };
        serde_json::to_value(body).expect("wire request serializes")
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut builder = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| Attempt::Retry(GatewayError::Transport(e.to_string())))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(GatewayError::Transport(e.to_string())))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(GatewayError::Transport(format!("HTTP {status}: {text}"))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(GatewayError::Transport(format!("HTTP {status}: {text}"))));
        }
        parse_completion(&text).map_err(Attempt::Fatal)
    }
}

/// Reads `choices[0].message.content` from a chat-completions payload.
pub(crate) fn parse_completion(payload: &str) -> Result<String, GatewayError> {
    let wire: WireResponse =
        serde_json::from_str(payload).map_err(|e| GatewayError::MalformedUpstream(e.to_string()))?;
    let first =
        wire.choices.into_iter().next().ok_or_else(|| GatewayError::MalformedUpstream("empty choices array".into()))?;
    first.message.content.ok_or_else(|| GatewayError::MalformedUpstream("choices[0].message.content is null".into()))
}

impl Gateway for HttpGateway {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let body = self.wire_body(request);
        let start = Instant::now();
        let mut backoff = self.config.initial_backoff;
        let attempts = self.config.max_attempts.max(1);
        let mut last = None;
        for n in 0..attempts {
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(ChatResponse {
                        text,
                        backend_id: self.id.clone(),
                        cached: false,
                        latency: start.elapsed(),
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    last = Some(e);
                    if n + 1 < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(last.unwrap_or_else(|| GatewayError::Transport("no attempt made".into())))
    }
}
