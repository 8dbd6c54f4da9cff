//! Deterministic mock backend.
//!
//! Responses are a pure function of the request (its digest, purpose,
//! labels, sampling seed and sample index) and the script. Scripts are JSON:
//!
//! ```json
//! {"strict": false, "rules": [
//!   {"purpose": "contrastive_answer", "responses": ["No, this is not {unrelated}."]}
//! ]}
//! ```
//!
//! The first matching rule answers. With several responses, draw `j` gets
//! response `j mod n` (or `seed mod n` when no draw index is set).
//! `{target}`, `{unrelated}` and `{concept}` expand from request labels.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, ModelRole, RequestPurpose};
use crate::domain::sha256_hex;
use crate::text::contains_normalized;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<RequestPurpose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<ModelRole>,
    /// Case-insensitive substring of the last user message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// Every listed label must be present with this value.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
    pub responses: Vec<String>,
}

impl MockRule {
    pub fn for_purpose(purpose: RequestPurpose, responses: &[&str]) -> Self {
        Self { purpose: Some(purpose), responses: responses.iter().map(|s| s.to_string()).collect(), ..Self::default() }
    }

    pub fn when_label(mut self, key: &str, value: &str) -> Self {
        self.labels.insert(key.into(), value.into());
        self
    }

    pub fn when_contains(mut self, needle: &str) -> Self {
        self.contains = Some(needle.into());
        self
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        self.purpose.is_none_or(|p| p == request.purpose)
            && self.role.is_none_or(|r| r == request.role)
            && self.contains.as_deref().is_none_or(|c| contains_normalized(request.last_user_text(), c))
            && self.labels.iter().all(|(k, v)| request.labels.get(k) == Some(v))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockScript {
    /// Unmatched requests fail with `UnscriptedRequest` instead of using the generator.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub generator_seed: u64,
    /// Upper bound of a per-request pseudo-random delay, to shuffle completion order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_latency_ms: Option<u64>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn strict(rules: Vec<MockRule>) -> Self {
        Self { strict: true, rules, ..Self::default() }
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Rules are tried in order, so this one wins over existing ones.
    pub fn with_priority_rule(mut self, rule: MockRule) -> Self {
        self.rules.insert(0, rule);
        self
    }
}

/// One observed call, in arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallLogEntry {
    pub role: ModelRole,
    pub purpose: RequestPurpose,
    pub digest: String,
    pub sampling_seed: Option<u64>,
    pub sample_index: Option<usize>,
    pub image_digests: Vec<String>,
    pub labels: BTreeMap<String, String>,
}

pub struct MockBackend {
    script: MockScript,
    log: Mutex<Vec<CallLogEntry>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script, log: Mutex::new(Vec::new()), in_flight: AtomicUsize::new(0), max_in_flight: AtomicUsize::new(0) }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn calls(&self) -> Vec<CallLogEntry> {
        self.log.lock().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().len()
    }

    /// Highest number of simultaneously running calls seen so far.
    pub fn max_concurrency_observed(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// The text the mock answers `request` with.
    pub fn mock_complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let digest = request.digest();
        if let Some(rule) = self.script.rules.iter().find(|r| r.matches(request)) {
            if rule.responses.is_empty() {
                return Ok(String::new());
            }
            let draw = match (request.sample_index, request.sampling_seed) {
                (Some(j), _) => j,
                (None, Some(seed)) => (seed % rule.responses.len() as u64) as usize,
                (None, None) => 0,
            };
            return Ok(expand(&rule.responses[draw % rule.responses.len()], request));
        }
        if self.script.strict {
            return Err(GatewayError::UnscriptedRequest { purpose: request.purpose, digest });
        }
        Ok(expand(&self.generate(request, &digest), request))
    }

    fn fingerprint(&self, request: &ChatRequest, digest: &str) -> String {
        let key = format!(
            "{digest}:{}:{}:{}",
            request.sampling_seed.unwrap_or(0),
            request.sample_index.unwrap_or(0),
            self.script.generator_seed
        );
        sha256_hex(key.as_bytes())[..8].to_string()
    }

    fn generate(&self, request: &ChatRequest, digest: &str) -> String {
        let tag = self.fingerprint(request, digest);
        match request.purpose {
            RequestPurpose::CaptionQuestion => "Describe this image.".into(),
            RequestPurpose::CaptionAnswer => format!("The image shows a detailed scene (view {tag})."),
            RequestPurpose::TargetQuestion => "What visual evidence in this image relates to {target}?".into(),
            RequestPurpose::ContrastiveQuestion => "What visual evidence in this image relates to {unrelated}?".into(),
            RequestPurpose::ContrastiveAnswer => "No, this image is not related to {unrelated}.".into(),
            RequestPurpose::TargetAnswer => {
                format!("The image relates to {{target}}: the visible elements illustrate it step by step (note {tag}).")
            }
            RequestPurpose::ConceptExtraction => "{target}".into(),
            RequestPurpose::RecognitionProbe | RequestPurpose::Other => format!("Mock response {tag}."),
        }
    }

    fn latency(&self, request: &ChatRequest) -> Option<Duration> {
        let max = self.script.max_latency_ms?;
        if max == 0 {
            return None;
        }
        let tag = self.fingerprint(request, &request.digest());
        let value = u64::from_str_radix(&tag, 16).unwrap_or(0);
        Some(Duration::from_millis(value % (max + 1)))
    }
}

fn expand(template: &str, request: &ChatRequest) -> String {
    let mut out = template.to_string();
    for key in ["target", "unrelated", "concept"] {
        if let Some(value) = request.labels.get(key) {
            out = out.replace(&format!("{{{key}}}"), value);
        }
    }
    out
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        self.log.lock().push(CallLogEntry {
            role: request.role,
            purpose: request.purpose,
            digest: request.digest(),
            sampling_seed: request.sampling_seed,
            sample_index: request.sample_index,
            image_digests: request.image_digests(),
            labels: request.labels.clone(),
        });
        match self.latency(request) {
            Some(delay) => tokio::time::sleep(delay).await,
            None => tokio::task::yield_now().await,
        }
        let text = self.mock_complete(request)?;
        let token_logprobs = request.want_logprobs.then(|| {
            text.split_whitespace()
                .map(|t| super::TokenLogprob { token: t.to_string(), logprob: -0.1 })
                .collect()
        });
        Ok(ChatResponse { text, token_logprobs, attempts: 1, latency_ms: 0 })
    }
}

/// Fails the first `failures` calls with a transient error, then delegates.
pub struct FlakyBackend<B> {
    inner: B,
    failures_left: AtomicU32,
    calls: AtomicU32,
}

impl<B> FlakyBackend<B> {
    pub fn new(inner: B, failures: u32) -> Self {
        Self { inner, failures_left: AtomicU32::new(failures), calls: AtomicU32::new(0) }
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl<B: ChatBackend> ChatBackend for FlakyBackend<B> {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let failing = self
            .failures_left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if failing {
            return Err(GatewayError::transient("injected transient failure"));
        }
        self.inner.complete(request).await
    }
}
