//! Retry with exponential backoff, applied uniformly to any client via the
//! [`Retrying`] wrapper so mock and HTTP backends share one policy.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::time::Duration;

use crate::core::{Caption, ImageRef, TagSet};

use super::{
    AnalyzerClient, CaptionerClient, ChatRequest, ClientError, DiscrepancyMode, EmbedderClient,
    EmbeddingVector, ReasonerClient, TaggerClient, TokenEmbedding,
};

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_retries: u32) -> Self {
        Self {
            max_retries,
            initial_backoff: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (1-based). Doubles each time, so
    /// the sequence is non-decreasing.
    pub fn backoff_delay(&self, retry: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

/// Run `op` with up to `policy.max_retries` retries on transient errors:
/// exactly min(failures, max_retries) + 1 attempts. The terminal error is
/// annotated with the attempt count.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut() -> Result<T, ClientError>,
) -> (Result<T, ClientError>, u32) {
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        match op() {
            Ok(value) => return (Ok(value), attempts),
            Err(err) => {
                if !err.is_transient() || attempts > policy.max_retries {
                    return (Err(annotate_attempts(err, attempts)), attempts);
                }
                let delay = policy.backoff_delay(attempts);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

fn annotate_attempts(err: ClientError, attempts: u32) -> ClientError {
    match err {
        ClientError::Transport {
            message, elapsed, ..
        } => ClientError::Transport {
            message,
            attempts,
            elapsed,
        },
        other => other,
    }
}

/// Observable call counters for a [`Retrying`] wrapper. Handles stay valid
/// after the wrapper is boxed into a trait object.
#[derive(Debug, Default)]
pub struct RetryCounters {
    total_calls: AtomicU64,
    total_attempts: AtomicU64,
    last_attempts: AtomicU32,
}

impl RetryCounters {
    /// Calls made through the wrapper (each may involve several attempts).
    pub fn total_calls(&self) -> u64 {
        self.total_calls.load(Ordering::SeqCst)
    }

    pub fn total_attempts(&self) -> u64 {
        self.total_attempts.load(Ordering::SeqCst)
    }

    /// Attempts made by the most recent call.
    pub fn last_attempts(&self) -> u32 {
        self.last_attempts.load(Ordering::SeqCst)
    }
}

/// Wraps any role client with the retry policy and counts attempts so tests
/// and run manifests can observe exact retry behavior.
pub struct Retrying<C> {
    inner: C,
    policy: RetryPolicy,
    counters: std::sync::Arc<RetryCounters>,
}

impl<C> Retrying<C> {
    pub fn new(inner: C, policy: RetryPolicy) -> Self {
        Self {
            inner,
            policy,
            counters: std::sync::Arc::new(RetryCounters::default()),
        }
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    pub fn counters(&self) -> std::sync::Arc<RetryCounters> {
        std::sync::Arc::clone(&self.counters)
    }

    /// Attempts made by the most recent call through this wrapper.
    pub fn last_attempts(&self) -> u32 {
        self.counters.last_attempts()
    }

    pub fn total_attempts(&self) -> u64 {
        self.counters.total_attempts()
    }

    fn run<T>(&self, op: impl FnMut() -> Result<T, ClientError>) -> Result<T, ClientError> {
        let (result, attempts) = with_retries(&self.policy, op);
        self.counters.total_calls.fetch_add(1, Ordering::SeqCst);
        self.counters.last_attempts.store(attempts, Ordering::SeqCst);
        self.counters
            .total_attempts
            .fetch_add(u64::from(attempts), Ordering::SeqCst);
        result
    }
}

impl<C: TaggerClient> TaggerClient for Retrying<C> {
    fn tag_image(&self, image: &ImageRef) -> Result<TagSet, ClientError> {
        self.run(|| self.inner.tag_image(image))
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

impl<C: CaptionerClient> CaptionerClient for Retrying<C> {
    fn caption_image(&self, image: &ImageRef) -> Result<Caption, ClientError> {
        self.run(|| self.inner.caption_image(image))
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

impl<C: AnalyzerClient> AnalyzerClient for Retrying<C> {
    fn analyze_discrepancy(
        &self,
        side_a: &str,
        side_b: &str,
        mode: DiscrepancyMode,
    ) -> Result<String, ClientError> {
        self.run(|| self.inner.analyze_discrepancy(side_a, side_b, mode))
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

impl<C: ReasonerClient> ReasonerClient for Retrying<C> {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, ClientError> {
        self.run(|| self.inner.chat_complete(req))
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

impl<C: EmbedderClient> EmbedderClient for Retrying<C> {
    fn embed_sentence(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        self.run(|| self.inner.embed_sentence(text))
    }

    fn embed_tokens(&self, text: &str) -> Result<Vec<TokenEmbedding>, ClientError> {
        self.run(|| self.inner.embed_tokens(text))
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn succeeds_after_transient_failures() {
        let failures = Cell::new(2u32);
        let policy = RetryPolicy::no_backoff(3);
        let (result, attempts) = with_retries(&policy, || {
            if failures.get() > 0 {
                failures.set(failures.get() - 1);
                Err(ClientError::transport("flaky"))
            } else {
                Ok(42)
            }
        });
        assert_eq!(result.unwrap(), 42);
        assert_eq!(attempts, 3); // min(failures, max_retries) + 1 = 2 + 1
    }

    #[test]
    fn exhausts_retries_on_persistent_failure() {
        let policy = RetryPolicy::no_backoff(2);
        let calls = Cell::new(0u32);
        let (result, attempts) = with_retries::<()>(&policy, || {
            calls.set(calls.get() + 1);
            Err(ClientError::transport("down"))
        });
        assert_eq!(attempts, 3); // max_retries + 1
        assert_eq!(calls.get(), 3);
        match result.unwrap_err() {
            ClientError::Transport { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_transient_errors_fail_fast() {
        let policy = RetryPolicy::no_backoff(5);
        let (result, attempts) =
            with_retries::<()>(&policy, || Err(ClientError::invalid_input("bad")));
        assert_eq!(attempts, 1);
        assert!(matches!(result, Err(ClientError::InvalidInput(_))));
    }

    #[test]
    fn backoff_delays_are_nondecreasing() {
        let policy = RetryPolicy {
            max_retries: 6,
            initial_backoff: Duration::from_millis(100),
        };
        let mut last = Duration::ZERO;
        for retry in 1..=6 {
            let d = policy.backoff_delay(retry);
            assert!(d >= last);
            last = d;
        }
        assert_eq!(policy.backoff_delay(1), Duration::from_millis(100));
        assert_eq!(policy.backoff_delay(3), Duration::from_millis(400));
    }
}
