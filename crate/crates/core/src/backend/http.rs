//! Chat-completions client: one user message carrying the prompt text and
//! the view as a base64 PNG data URL.

use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendConfig, BackendError, ModelRequest, ModelResponse};
use crate::rng::{lineage_seed, RandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    /// Backoff is stretched by up to this fraction.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff_ms: 500,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, doubling from `base_backoff_ms`.
    pub fn backoff(&self, attempt: u32, rng: &mut RandomStream) -> Duration {
        let base = self.base_backoff_ms.saturating_mul(1 << (attempt - 1).min(16)) as f64;
        Duration::from_millis((base * (1.0 + self.jitter * rng.next_f64())) as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpReply {
    pub status: u16,
    pub body: Vec<u8>,
}

/// Connection-level failure (refused, reset, timed out).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportFailure(pub String);

pub trait Transport: Send + Sync {
    fn post(&self, req: &HttpRequest) -> Result<HttpReply, TransportFailure>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self { agent: config.into() }
    }
}

impl Transport for UreqTransport {
    fn post(&self, req: &HttpRequest) -> Result<HttpReply, TransportFailure> {
        let mut builder = self.agent.post(&req.url);
        for (k, v) in &req.headers {
            builder = builder.header(k.as_str(), v.as_str());
        }
        let mut resp = builder
            .send(&req.body[..])
            .map_err(|e| TransportFailure(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_vec()
            .map_err(|e| TransportFailure(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

pub fn chat_request_body(model_name: &str, req: &ModelRequest) -> Value {
    let data_url = format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(req.png.as_slice())
    );
    let mut body = json!({
        "model": model_name,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": req.prompt},
                {"type": "image_url", "image_url": {"url": data_url}},
            ],
        }],
        "temperature": req.decode.temperature,
        "max_tokens": req.decode.max_output_tokens,
        "stream": false,
    });
    if req.decode.greedy {
        body["top_p"] = json!(1.0);
    }
    body
}

fn excerpt(body: &[u8]) -> String {
    let text = String::from_utf8_lossy(body);
    let mut out: String = text.chars().take(200).collect();
    if text.chars().count() > 200 {
        out.push_str("...");
    }
    out
}

/// Extracts `choices[0].message.content`, accepting either a string or an
/// array of text parts.
pub fn parse_chat_response(body: &[u8]) -> Result<String, BackendError> {
    let protocol = || BackendError::Protocol { excerpt: excerpt(body) };
    let v: Value = serde_json::from_slice(body).map_err(|_| protocol())?;
    let content = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .ok_or_else(protocol)?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            if texts.is_empty() {
                Err(protocol())
            } else {
                Ok(texts.join(""))
            }
        }
        _ => Err(protocol()),
    }
}

pub struct HttpBackend<T> {
    cfg: BackendConfig,
    transport: T,
    api_key: Option<String>,
    sleep: fn(Duration),
}

impl HttpBackend<UreqTransport> {
    /// Reads the API key from `cfg.api_key_env_var`; an unset variable sends no
    /// `Authorization` header.
    pub fn from_env(cfg: BackendConfig) -> Self {
        let key = std::env::var(&cfg.api_key_env_var).ok().filter(|k| !k.is_empty());
        let transport = UreqTransport::new(Duration::from_millis(cfg.timeout_ms));
        Self::new(cfg, transport, key)
    }
}

impl<T: Transport> HttpBackend<T> {
    pub fn new(cfg: BackendConfig, transport: T, api_key: Option<String>) -> Self {
        Self {
            cfg,
            transport,
            api_key,
            sleep: std::thread::sleep,
        }
    }

    /// Replaces the backoff sleep (tests use a no-op).
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn build(&self, req: &ModelRequest) -> HttpRequest {
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(key) = &self.api_key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        HttpRequest {
            url: self.cfg.endpoint_url.clone(),
            headers,
            body: serde_json::to_vec(&chat_request_body(&self.cfg.model_name, req)).expect("json value"),
            timeout: Duration::from_millis(self.cfg.timeout_ms),
        }
    }
}

impl<T: Transport> Backend for HttpBackend<T> {
    fn model_name(&self) -> &str {
        &self.cfg.model_name
    }

    fn infer(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let http = self.build(req);
        let retry = self.cfg.retry;
        let mut jitter = RandomStream::from_seed(lineage_seed(
            0x5245_5452_59,
            &req.question_id,
            req.view_index.unwrap_or(u32::MAX),
        ));
        let started = Instant::now();
        let mut last = String::new();
        for attempt in 1..=retry.max_attempts {
            if attempt > 1 {
                (self.sleep)(retry.backoff(attempt - 1, &mut jitter));
            }
            match self.transport.post(&http) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let raw_text = parse_chat_response(&reply.body)?;
                    return Ok(ModelResponse {
                        raw_text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempt,
                        from_cache: false,
                    });
                }
                Ok(reply) if (400..500).contains(&reply.status) => {
                    return Err(BackendError::Config {
                        status: reply.status,
                        message: excerpt(&reply.body),
                    });
                }
                Ok(reply) if reply.status >= 500 => {
                    last = format!("HTTP {}: {}", reply.status, excerpt(&reply.body));
                }
                Ok(reply) => {
                    return Err(BackendError::Protocol {
                        excerpt: format!("unexpected HTTP {}: {}", reply.status, excerpt(&reply.body)),
                    });
                }
                Err(TransportFailure(msg)) => last = msg,
            }
        }
        Err(BackendError::Transport {
            attempts: retry.max_attempts,
            message: last,
        })
    }
}
