use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::Semaphore;

use super::{Backend, BackendError, BackendSpec, Completion, Operation, Prompt, ResponseCache};

/// Shared handle to a backend with limits, retries and optional caching.
#[derive(Clone)]
pub struct BackendClient {
    inner: Arc<dyn Backend>,
    permits: Arc<Semaphore>,
    cache: Option<Arc<ResponseCache>>,
    requests: Arc<AtomicU64>,
}

impl BackendClient {
    pub fn new(inner: Arc<dyn Backend>) -> Result<Self, BackendError> {
        inner.spec().validate()?;
        let permits = Arc::new(Semaphore::new(inner.spec().limits.max_inflight));
        Ok(BackendClient {
            inner,
            permits,
            cache: None,
            requests: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn spec(&self) -> &BackendSpec {
        self.inner.spec()
    }

    pub fn id(&self) -> &str {
        &self.inner.spec().id
    }

    /// Transport attempts issued through this handle (cache hits excluded).
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub async fn generate(&self, prompt: &Prompt) -> Result<Completion, BackendError> {
        if !self.spec().capabilities.generate {
            return Err(BackendError::Capability {
                backend: self.id().to_string(),
                capability: "generate",
            });
        }
        let inner = self.inner.clone();
        self.cached(Operation::Generate, prompt, || {
            let inner = inner.clone();
            async move { inner.generate(prompt).await }
        })
        .await
    }

    pub async fn score_target(&self, context: &str, target: &str) -> Result<Vec<f64>, BackendError> {
        if !self.spec().capabilities.score_logprobs {
            return Err(BackendError::Capability {
                backend: self.id().to_string(),
                capability: "score_logprobs",
            });
        }
        if target.trim().is_empty() {
            return Err(BackendError::Precondition(
                "score_target requires a non-empty target".into(),
            ));
        }
        let inner = self.inner.clone();
        let scores = self
            .cached(Operation::ScoreTarget, &(context, target), || {
                let inner = inner.clone();
                async move { inner.score_target(context, target).await }
            })
            .await?;
        if let Some(bad) = scores.iter().find(|v| v.is_nan() || **v > 0.0) {
            return Err(BackendError::Protocol(format!("log-probability {bad} is not <= 0")));
        }
        Ok(scores)
    }

    async fn cached<I, T, F, Fut>(&self, op: Operation, inputs: &I, call: F) -> Result<T, BackendError>
    where
        I: Serialize + ?Sized,
        T: Serialize + DeserializeOwned,
        F: Fn() -> Fut,
        Fut: Future<Output = Result<T, BackendError>>,
    {
        let key = self.cache.as_ref().map(|_| ResponseCache::key(self.id(), op, &inputs));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.get(key) {
                return Ok(hit);
            }
        }
        let value = self.with_retry(op, call).await?;
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Err(err) = cache.put(key, &value) {
                tracing::warn!(%err, "failed to persist cache entry");
            }
        }
        Ok(value)
    }

    async fn with_retry<T, F, Fut>(&self, op: Operation, call: F) -> Result<T, BackendError>
    where
        F: Fn() -> Fut,
        Fut: Future<Output = Result<T, BackendError>>,
    {
        let limits = self.spec().limits;
        let timeout = Duration::from_secs_f64(limits.timeout_secs);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let result = {
                let _permit = self.permits.acquire().await.expect("semaphore never closed");
                self.requests.fetch_add(1, Ordering::Relaxed);
                match tokio::time::timeout(timeout, call()).await {
                    Ok(r) => r,
                    Err(_) => Err(BackendError::Timeout),
                }
            };
            match result {
                Ok(v) => return Ok(v),
                Err(err) if err.is_retriable() && attempts <= limits.max_retries => {
                    let delay = limits.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                    tracing::debug!(backend = self.id(), %op, attempts, %err, "retrying");
                    tokio::time::sleep(Duration::from_millis(delay)).await;
                }
                Err(err) => {
                    return Err(BackendError::Failed {
                        backend: self.id().to_string(),
                        op: op.as_str(),
                        attempts,
                        source: Box::new(err),
                    })
                }
            }
        }
    }
}
