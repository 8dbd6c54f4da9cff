use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use http_body_util::{BodyExt, Full};
use hyper::body::Bytes;
use hyper::{Method, Request, StatusCode};
use hyper_rustls::HttpsConnector;
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;

use super::retry::{RateLimited, RetryPolicy, RetryingBackend};
use super::wire::{parse_response, to_wire};
use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, ModelRole};

type HttpClient = Client<HttpsConnector<HttpConnector>, Full<Bytes>>;

fn client() -> HttpClient {
    let connector = hyper_rustls::HttpsConnectorBuilder::new()
        .with_webpki_roots()
        .https_or_http()
        .enable_http1()
        .build();
    Client::builder(TokioExecutor::new()).build(connector)
}

/// Endpoint settings for one role.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    /// Base URL up to the API version, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub retry: RetryPolicy,
    /// Requests per second; `None` is unlimited.
    pub rate_limit: Option<f64>,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            retry: RetryPolicy::default(),
            rate_limit: Some(2.0),
        }
    }

    /// Reads `SDFT_SYNTH_*` or `SDFT_BASE_*`. The model name comes from
    /// `SDFT_SYNTH_MODEL` / `SDFT_BASE_MODEL` and defaults to the role name.
    pub fn from_env(role: ModelRole) -> Option<Self> {
        let prefix = match role {
            ModelRole::Synthesizer => "SDFT_SYNTH",
            ModelRole::Base => "SDFT_BASE",
        };
        let base_url = std::env::var(format!("{prefix}_BASE_URL")).ok().filter(|s| !s.is_empty())?;
        let model = std::env::var(format!("{prefix}_MODEL")).unwrap_or_else(|_| role.to_string());
        let mut config = Self::new(base_url, model);
        config.api_key = std::env::var(format!("{prefix}_API_KEY")).ok().filter(|s| !s.is_empty());
        Some(config)
    }

    /// HTTP backend wrapped in retries and, when set, the rate limit.
    pub fn into_backend(self) -> Result<Arc<dyn ChatBackend>, GatewayError> {
        let retry = self.retry.clone();
        let rate = self.rate_limit;
        let retrying = RetryingBackend::new(HttpBackend::new(self)?, retry);
        Ok(match rate {
            Some(per_sec) => Arc::new(RateLimited::new(retrying, per_sec)),
            None => Arc::new(retrying),
        })
    }
}

/// Single-attempt chat-completions client. Wrap it in [`RetryingBackend`].
pub struct HttpBackend {
    config: EndpointConfig,
    endpoint: hyper::Uri,
    client: HttpClient,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Result<Self, GatewayError> {
        let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let endpoint = url
            .parse()
            .map_err(|e| GatewayError::InvalidRequest(format!("bad endpoint URL {url}: {e}")))?;
        Ok(Self { config, endpoint, client: client() })
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let started = tokio::time::Instant::now();
        let body = serde_json::to_vec(&to_wire(request, &self.config.model))
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let mut builder = Request::builder()
            .method(Method::POST)
            .uri(self.endpoint.clone())
            .header("content-type", "application/json");
        if let Some(key) = &self.config.api_key {
            builder = builder.header("authorization", format!("Bearer {key}"));
        }
        let http_request = builder
            .body(Full::new(Bytes::from(body)))
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let response = self
            .client
            .request(http_request)
            .await
            .map_err(|e| GatewayError::transient(format!("request failed: {e}")))?;
        let status = response.status();
        let bytes = response
            .into_body()
            .collect()
            .await
            .map_err(|e| GatewayError::transient(format!("reading body failed: {e}")))?
            .to_bytes();
        check_status(status, &bytes)?;
        let reply = parse_response(&bytes)?;
        Ok(ChatResponse {
            text: reply.text,
            token_logprobs: reply.token_logprobs,
            attempts: 1,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

fn check_status(status: StatusCode, body: &[u8]) -> Result<(), GatewayError> {
    if status.is_success() {
        return Ok(());
    }
    let snippet: String = String::from_utf8_lossy(body).chars().take(200).collect();
    if status == StatusCode::TOO_MANY_REQUESTS || status == StatusCode::REQUEST_TIMEOUT || status.is_server_error() {
        Err(GatewayError::transient(format!("HTTP {status}: {snippet}")))
    } else {
        Err(GatewayError::Protocol(format!("HTTP {status}: {snippet}")))
    }
}

/// GETs `url` and returns the body; used for URL image locators.
pub async fn fetch_bytes(url: &str) -> Result<Vec<u8>, GatewayError> {
    let uri: hyper::Uri = url.parse().map_err(|e| GatewayError::Image(format!("bad URL {url}: {e}")))?;
    let request = Request::builder()
        .uri(uri)
        .body(Full::new(Bytes::new()))
        .map_err(|e| GatewayError::Image(e.to_string()))?;
    let response = tokio::time::timeout(Duration::from_secs(60), client().request(request))
        .await
        .map_err(|_| GatewayError::Image(format!("timed out fetching {url}")))?
        .map_err(|e| GatewayError::Image(format!("fetching {url}: {e}")))?;
    if !response.status().is_success() {
        return Err(GatewayError::Image(format!("fetching {url}: HTTP {}", response.status())));
    }
    let body = response
        .into_body()
        .collect()
        .await
        .map_err(|e| GatewayError::Image(format!("reading {url}: {e}")))?;
    Ok(body.to_bytes().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_classification() {
        assert!(check_status(StatusCode::OK, b"").is_ok());
        assert!(check_status(StatusCode::SERVICE_UNAVAILABLE, b"").unwrap_err().is_transient());
        assert!(check_status(StatusCode::TOO_MANY_REQUESTS, b"").unwrap_err().is_transient());
        assert!(matches!(check_status(StatusCode::BAD_REQUEST, b"nope"), Err(GatewayError::Protocol(m)) if m.contains("nope")));
    }
}
