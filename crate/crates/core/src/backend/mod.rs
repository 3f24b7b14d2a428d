//! Model backends: anything that maps (image, prompt) to raw answer text.

mod cache;
mod http;
mod limit;
mod oracle;
mod stub;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::amcv::AnswerType;
use crate::dataset::RenderSchema;
use crate::image::Image;

pub use cache::{CacheEntry, CachedBackend, ReplayCache, ReplayOnly};
pub use http::{
    chat_request_body, parse_chat_response, HttpBackend, HttpReply, HttpRequest, RetryPolicy, Transport,
    TransportFailure, UreqTransport,
};
pub use limit::Bounded;
pub use oracle::{oracle_answer, scripted_oracle_infer, OracleBackend};
pub use stub::StubBackend;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request rejected with HTTP {status}: {message}")]
    Config { status: u16, message: String },
    #[error("malformed response body: {excerpt}")]
    Protocol { excerpt: String },
    #[error("unsupported question: {0}")]
    Unsupported(String),
    #[error("replay cache: {0}")]
    Cache(String),
}

impl BackendError {
    /// Errors that invalidate the whole run rather than one question.
    pub fn is_fatal(&self) -> bool {
        matches!(self, BackendError::Config { .. })
    }
}

/// Decoding settings: greedy, temperature 0, 1024 output tokens unless overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub greedy: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 1024,
            greedy: true,
        }
    }
}

/// One view of one question, ready to send.
#[derive(Debug, Clone)]
pub struct ModelRequest {
    pub question_id: String,
    /// `None` for the self-correction call.
    pub view_index: Option<u32>,
    pub image: Arc<Image>,
    pub png: Arc<Vec<u8>>,
    pub question_text: String,
    /// Fully rendered prompt text sent to the model.
    pub prompt: String,
    pub prompt_template_id: String,
    pub answer_type: AnswerType,
    pub choices: Option<Vec<String>>,
    /// Layout of synthetic charts; only the scripted oracle reads it.
    pub render_schema: Option<RenderSchema>,
    pub decode: DecodeParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub raw_text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub from_cache: bool,
}

impl ModelResponse {
    pub fn local(raw_text: String) -> Self {
        Self {
            raw_text,
            latency_ms: 0,
            attempt_count: 1,
            from_cache: false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn model_name(&self) -> &str;
    fn infer(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn infer(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).infer(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn infer(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).infer(req)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn infer(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).infer(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheDigest(pub [u8; 32]);

impl CacheDigest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl std::fmt::Display for CacheDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// SHA-256 over length-prefixed fields: PNG bytes, rendered prompt, model
/// name, then the decode parameters.
pub fn cache_key(req: &ModelRequest, model_name: &str) -> CacheDigest {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(b"rdr-cache-v1");
    field(&req.png);
    field(req.prompt.as_bytes());
    field(model_name.as_bytes());
    field(&req.decode.temperature.to_bits().to_le_bytes());
    field(&req.decode.max_output_tokens.to_le_bytes());
    field(&[req.decode.greedy as u8]);
    CacheDigest(h.finalize().into())
}

/// Connection and retry settings for remote backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env_var: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
    #[serde(default)]
    pub decode: DecodeParams,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8000/v1/chat/completions".to_string(),
            model_name: "llava-1.5-13b".to_string(),
            api_key_env_var: "RDR_API_KEY".to_string(),
            max_in_flight: 8,
            retry: RetryPolicy::default(),
            timeout_ms: 120_000,
            decode: DecodeParams::default(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be >= 1".into());
        }
        if self.retry.max_attempts == 0 {
            return Err("retry.max_attempts must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.retry.jitter) {
            return Err("retry.jitter must lie in [0, 1]".into());
        }
        Ok(())
    }
}
