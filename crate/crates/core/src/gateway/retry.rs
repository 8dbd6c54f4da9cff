use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use tokio::sync::Mutex;
use tokio::time::Instant;

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError};

/// Exponential backoff with jitter: retry `k` (from 0) sleeps
/// `base_delay * 2^k * (1 ± jitter)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub jitter: f64,
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            jitter: 0.2,
            request_timeout: Duration::from_secs(120),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32, unit_random: f64) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * 2f64.powi(retry as i32);
        let factor = 1.0 + self.jitter * (2.0 * unit_random - 1.0);
        Duration::from_secs_f64((nominal * factor).max(0.0))
    }
}

/// Retries transient failures of `inner` per the policy. Time comes from
/// tokio, so tests can run it under a paused clock.
pub struct RetryingBackend<B> {
    inner: B,
    policy: RetryPolicy,
}

impl<B> RetryingBackend<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

#[async_trait]
impl<B: ChatBackend> ChatBackend for RetryingBackend<B> {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let started = Instant::now();
        let mut attempt: u32 = 0;
        loop {
            attempt += 1;
            let outcome = match tokio::time::timeout(self.policy.request_timeout, self.inner.complete(request)).await {
                Ok(result) => result,
                Err(_) => Err(GatewayError::transient(format!("timed out after {:?}", self.policy.request_timeout))),
            };
            match outcome {
                Ok(mut response) => {
                    response.attempts = attempt;
                    response.latency_ms = started.elapsed().as_millis() as u64;
                    return Ok(response);
                }
                Err(e) if e.is_transient() && attempt <= self.policy.max_retries => {
                    let delay = self.policy.backoff(attempt - 1, rand::rng().random::<f64>());
                    tracing::debug!(attempt, ?delay, error = %e, "retrying transient failure");
                    tokio::time::sleep(delay).await;
                }
                Err(GatewayError::Transport { message, .. }) => {
                    return Err(GatewayError::Transport { message, attempts: attempt });
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Spaces requests at least `1 / per_second` apart.
pub struct RateLimited<B> {
    inner: B,
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl<B> RateLimited<B> {
    pub fn new(inner: B, per_second: f64) -> Self {
        let interval = if per_second > 0.0 { Duration::from_secs_f64(1.0 / per_second) } else { Duration::ZERO };
        Self { inner, interval, next_slot: Mutex::new(None) }
    }
}

#[async_trait]
impl<B: ChatBackend> ChatBackend for RateLimited<B> {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let wait_until = {
            let mut slot = self.next_slot.lock().await;
            let now = Instant::now();
            let start = slot.map_or(now, |s| s.max(now));
            *slot = Some(start + self.interval);
            start
        };
        tokio::time::sleep_until(wait_until).await;
        self.inner.complete(request).await
    }
}
