//! Client for the two model roles (synthesizer and base model) over a
//! chat-completions wire protocol, plus a scripted mock backend.

mod http;
mod mock;
mod retry;
pub mod wire;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::domain::{sha256_hex, ImageRef};

pub use http::{fetch_bytes, EndpointConfig, HttpBackend};
pub use mock::{CallLogEntry, FlakyBackend, MockBackend, MockRule, MockScript};
pub use retry::{RateLimited, RetryPolicy, RetryingBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Synthesizer,
    Base,
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelRole::Synthesizer => "synthesizer",
            ModelRole::Base => "base",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

/// Image bytes whose digest has been checked against their [`ImageRef`].
#[derive(Clone, PartialEq, Eq)]
pub struct LoadedImage {
    pub image: ImageRef,
    pub bytes: Arc<[u8]>,
}

impl fmt::Debug for LoadedImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LoadedImage").field("image", &self.image).field("len", &self.bytes.len()).finish()
    }
}

impl LoadedImage {
    pub fn new(image: ImageRef, bytes: impl Into<Arc<[u8]>>) -> Self {
        Self { image, bytes: bytes.into() }
    }

    /// Wraps `bytes` after checking them against the reference's digest.
    pub fn verified(image: ImageRef, bytes: Vec<u8>) -> Result<Self, GatewayError> {
        if !image.matches_bytes(&bytes) {
            return Err(GatewayError::Image(format!(
                "digest mismatch for {}: expected {}, got {}",
                image.locator,
                image.digest,
                sha256_hex(&bytes)
            )));
        }
        Ok(Self::new(image, bytes))
    }
}

/// Reads the bytes behind `image` (file path relative to `base_dir`, or an
/// http(s) URL) and verifies the digest.
pub async fn load_image(image: &ImageRef, base_dir: &Path) -> Result<LoadedImage, GatewayError> {
    let locator = image.locator.as_str();
    let bytes = if locator.starts_with("http://") || locator.starts_with("https://") {
        fetch_bytes(locator).await?
    } else {
        let path = locator.strip_prefix("file://").unwrap_or(locator);
        let path = base_dir.join(path);
        tokio::fs::read(&path)
            .await
            .map_err(|e| GatewayError::Image(format!("cannot read {}: {e}", path.display())))?
    };
    LoadedImage::verified(image.clone(), bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub speaker: Speaker,
    pub text: String,
    pub attachments: Vec<LoadedImage>,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::User, text: text.into(), attachments: Vec::new() }
    }

    pub fn user_with_image(text: impl Into<String>, image: LoadedImage) -> Self {
        Self { speaker: Speaker::User, text: text.into(), attachments: vec![image] }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::Assistant, text: text.into(), attachments: Vec::new() }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::System, text: text.into(), attachments: Vec::new() }
    }
}

/// What a request is for. Not sent over the wire; the mock scripts on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestPurpose {
    CaptionQuestion,
    TargetQuestion,
    ContrastiveQuestion,
    CaptionAnswer,
    ContrastiveAnswer,
    TargetAnswer,
    ConceptExtraction,
    RecognitionProbe,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub role: ModelRole,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub sampling_seed: Option<u64>,
    pub max_tokens: u32,
    pub want_logprobs: bool,
    pub purpose: RequestPurpose,
    /// Index of this draw when several samples answer the same prompt.
    pub sample_index: Option<usize>,
    /// Free-form labels (concept, target, unrelated) for scripting and logs.
    pub labels: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn new(role: ModelRole, purpose: RequestPurpose, messages: Vec<ChatMessage>) -> Self {
        Self {
            role,
            messages,
            temperature: 0.0,
            sampling_seed: None,
            max_tokens: 1024,
            want_logprobs: false,
            purpose,
            sample_index: None,
            labels: BTreeMap::new(),
        }
    }

    pub fn temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.sampling_seed = Some(seed);
        self
    }

    pub fn max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn sample(mut self, index: usize) -> Self {
        self.sample_index = Some(index);
        self
    }

    pub fn label(mut self, key: &str, value: impl Into<String>) -> Self {
        self.labels.insert(key.to_string(), value.into());
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        match self.messages.iter().find(|m| m.speaker != Speaker::System) {
            Some(m) if m.speaker == Speaker::User => {}
            _ => return Err(GatewayError::InvalidRequest("first non-system message must come from the user".into())),
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        for m in &self.messages {
            for a in &m.attachments {
                if !a.image.matches_bytes(&a.bytes) {
                    return Err(GatewayError::InvalidRequest(format!("attachment {} does not match its digest", a.image.locator)));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical serialization of the request content:
    /// role, messages (attachments by digest), temperature, max tokens and
    /// the logprobs flag. The sampling seed and local metadata are excluded.
    pub fn digest(&self) -> String {
        let messages: Vec<serde_json::Value> = self
            .messages
            .iter()
            .map(|m| {
                serde_json::json!({
                    "speaker": m.speaker,
                    "text": m.text,
                    "attachments": m.attachments.iter().map(|a| a.image.digest.clone()).collect::<Vec<_>>(),
                })
            })
            .collect();
        let canonical = crate::dataset::canonical_json(&serde_json::json!({
            "role": self.role,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "logprobs": self.want_logprobs,
        }));
        sha256_hex(canonical.as_bytes())
    }

    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.speaker == Speaker::User)
            .map_or("", |m| m.text.as_str())
    }

    pub fn image_digests(&self) -> Vec<String> {
        self.messages.iter().flat_map(|m| m.attachments.iter().map(|a| a.image.digest.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub attempts: u32,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model returned an empty response")]
    EmptyResponse,
    #[error("no scripted response for {purpose:?} request {digest}")]
    UnscriptedRequest { purpose: RequestPurpose, digest: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no endpoint configured for role '{0}'")]
    NotConfigured(ModelRole),
    #[error("image error: {0}")]
    Image(String),
}

impl GatewayError {
    pub fn transient(message: impl Into<String>) -> Self {
        GatewayError::Transport { message: message.into(), attempts: 1 }
    }

    /// Failures worth retrying: connection problems, timeouts, 429 and 5xx.
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

#[async_trait]
impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request).await
    }
}

/// Routes each request to the backend of its role.
#[derive(Clone)]
pub struct Gateway {
    synthesizer: Option<Arc<dyn ChatBackend>>,
    base: Option<Arc<dyn ChatBackend>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("synthesizer", &self.synthesizer.is_some())
            .field("base", &self.base.is_some())
            .finish()
    }
}

impl Gateway {
    pub fn new(synthesizer: Arc<dyn ChatBackend>, base: Arc<dyn ChatBackend>) -> Self {
        Self { synthesizer: Some(synthesizer), base: Some(base) }
    }

    /// One backend serving both roles, typically the mock.
    pub fn single(backend: Arc<dyn ChatBackend>) -> Self {
        Self { synthesizer: Some(backend.clone()), base: Some(backend) }
    }

    pub fn with_role(mut self, role: ModelRole, backend: Arc<dyn ChatBackend>) -> Self {
        match role {
            ModelRole::Synthesizer => self.synthesizer = Some(backend),
            ModelRole::Base => self.base = Some(backend),
        }
        self
    }

    pub fn empty() -> Self {
        Self { synthesizer: None, base: None }
    }

    /// Live gateway from `SDFT_{SYNTH,BASE}_BASE_URL` / `_API_KEY`. Roles
    /// without a URL stay unconfigured.
    pub fn from_env() -> Result<Self, GatewayError> {
        let mut gateway = Self::empty();
        for role in [ModelRole::Synthesizer, ModelRole::Base] {
            if let Some(config) = EndpointConfig::from_env(role) {
                gateway = gateway.with_role(role, config.into_backend()?);
            }
        }
        Ok(gateway)
    }

    pub fn is_configured(&self, role: ModelRole) -> bool {
        match role {
            ModelRole::Synthesizer => self.synthesizer.is_some(),
            ModelRole::Base => self.base.is_some(),
        }
    }

    pub async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let backend = match request.role {
            ModelRole::Synthesizer => self.synthesizer.as_ref(),
            ModelRole::Base => self.base.as_ref(),
        }
        .ok_or(GatewayError::NotConfigured(request.role))?;
        let response = backend.complete(request).await?;
        if response.text.trim().is_empty() {
            return Err(GatewayError::EmptyResponse);
        }
        Ok(response)
    }
}
