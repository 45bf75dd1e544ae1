use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{word_count, Backend, BackendError, BackendSpec, Completion, Prompt, Usage};
use crate::records::{digest_json, RecordError};

/// Scripted generation hook consulted after fixtures and before the fallback.
pub type Responder = Arc<dyn Fn(&Prompt) -> Option<String> + Send + Sync>;
/// Scripted scoring hook: `(context, target) -> per-token log-probabilities`.
pub type ScoreResponder = Arc<dyn Fn(&str, &str) -> Option<Vec<f64>> + Send + Sync>;

/// Exact-match fixture tables, persisted as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixtures {
    /// Prompt digest -> completion text.
    #[serde(default)]
    pub generate: BTreeMap<String, String>,
    /// Digest of `(context, target)` -> per-token log-probabilities.
    #[serde(default)]
    pub score: BTreeMap<String, Vec<f64>>,
}

impl MockFixtures {
    pub fn load(path: &Path) -> Result<Self, RecordError> {
        let bytes = fs::read(path).map_err(|e| RecordError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| RecordError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn score_key(context: &str, target: &str) -> String {
        digest_json(&(context, target))
    }
}

/// Deterministic in-process backend.
///
/// Lookup order for `generate`: fixture table by prompt digest, the optional
/// responder, then a digest-seeded pseudo-text generator that samples word
/// spans from the prompt. Scoring follows the same three layers.
pub struct MockBackend {
    spec: BackendSpec,
    fixtures: MockFixtures,
    responder: Option<Responder>,
    score_responder: Option<ScoreResponder>,
    delay: Duration,
    record_prompts: bool,
    calls: AtomicUsize,
    inflight: AtomicUsize,
    max_inflight: AtomicUsize,
    prompts: Mutex<Vec<Prompt>>,
}

impl MockBackend {
    pub fn new(spec: BackendSpec) -> Self {
        MockBackend {
            spec,
            fixtures: MockFixtures::default(),
            responder: None,
            score_responder: None,
            delay: Duration::ZERO,
            record_prompts: false,
            calls: AtomicUsize::new(0),
            inflight: AtomicUsize::new(0),
            max_inflight: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn with_fixtures(mut self, fixtures: MockFixtures) -> Self {
        self.fixtures = fixtures;
        self
    }

    pub fn with_responder(mut self, responder: Responder) -> Self {
        self.responder = Some(responder);
        self
    }

    pub fn with_score_responder(mut self, responder: ScoreResponder) -> Self {
        self.score_responder = Some(responder);
        self
    }

    /// Simulated per-call latency, used to observe concurrency.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    /// Keep every generate prompt for later inspection.
    pub fn recording(mut self) -> Self {
        self.record_prompts = true;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_inflight_seen(&self) -> usize {
        self.max_inflight.load(Ordering::SeqCst)
    }

    pub fn recorded_prompts(&self) -> Vec<Prompt> {
        self.prompts.lock().expect("prompt log").clone()
    }

    async fn enter(&self) -> InflightGuard<'_> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.inflight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_inflight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        InflightGuard(&self.inflight)
    }

    /// The deterministic fallback text for a prompt.
    pub fn fallback_text(prompt: &Prompt) -> String {
        let mut rng = rng_from_digest(&prompt.digest());
        let source: Vec<&str> = prompt.user_text().split_whitespace().collect();
        let target_len = rng.random_range(12..=40usize);
        let mut out: Vec<&str> = Vec::with_capacity(target_len + 8);
        while out.len() < target_len {
            if source.is_empty() {
                out.push(LEXICON[rng.random_range(0..LEXICON.len())]);
                continue;
            }
            let start = rng.random_range(0..source.len());
            let span = rng.random_range(3..=8usize);
            out.extend(source.iter().skip(start).take(span));
        }
        out.join(" ")
    }

    /// The deterministic fallback log-probabilities: one per whitespace token.
    pub fn fallback_scores(context: &str, target: &str) -> Vec<f64> {
        let mut rng = rng_from_digest(&MockFixtures::score_key(context, target));
        target
            .split_whitespace()
            .map(|_| -(0.05 + 4.95 * rng.random::<f64>()))
            .collect()
    }
}

const LEXICON: &[&str] = &[
    "background",
    "history",
    "records",
    "first",
    "known",
    "during",
    "region",
    "later",
    "early",
    "notable",
    "period",
    "series",
    "several",
    "years",
    "founded",
    "located",
    "called",
    "work",
];

pub(crate) fn rng_from_digest(digest: &str) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    let bytes = hex::decode(digest).expect("hex digest");
    seed.copy_from_slice(&bytes[..32]);
    ChaCha8Rng::from_seed(seed)
}

struct InflightGuard<'a>(&'a AtomicUsize);

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl Backend for MockBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    async fn generate(&self, prompt: &Prompt) -> Result<Completion, BackendError> {
        let _guard = self.enter().await;
        if self.record_prompts {
            self.prompts.lock().expect("prompt log").push(prompt.clone());
        }
        let text = self
            .fixtures
            .generate
            .get(&prompt.digest())
            .cloned()
            .or_else(|| self.responder.as_ref().and_then(|r| r(prompt)))
            .unwrap_or_else(|| Self::fallback_text(prompt));
        Ok(Completion {
            usage: Usage {
                prompt_tokens: word_count(&prompt.text()),
                output_tokens: word_count(&text),
            },
            text,
            token_logprobs: None,
            latency_secs: 0.0,
        })
    }

    async fn score_target(&self, context: &str, target: &str) -> Result<Vec<f64>, BackendError> {
        let _guard = self.enter().await;
        Ok(self
            .fixtures
            .score
            .get(&MockFixtures::score_key(context, target))
            .cloned()
            .or_else(|| self.score_responder.as_ref().and_then(|r| r(context, target)))
            .unwrap_or_else(|| Self::fallback_scores(context, target)))
    }
}
