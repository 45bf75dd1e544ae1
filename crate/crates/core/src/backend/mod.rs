//! Uniform access to every LLM role (generator, rewriter, reader, verifier,
//! sequence scorer).
//!
//! A [`Backend`] is a raw transport that performs exactly one attempt per call.
//! [`BackendClient`] wraps it with the per-spec in-flight bound, retry with
//! exponential backoff, capability checks and the on-disk response cache.

mod cache;
mod client;
mod mock;
mod remote;
pub mod sim;

use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::records::digest_json;

pub use cache::{CacheStats, ResponseCache};
pub use client::BackendClient;
pub use mock::{MockBackend, MockFixtures, Responder, ScoreResponder};
pub use remote::RemoteBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(default = "yes")]
    pub generate: bool,
    #[serde(default)]
    pub score_logprobs: bool,
}

fn yes() -> bool {
    true
}

impl Default for Capabilities {
    fn default() -> Self {
        Capabilities {
            generate: true,
            score_logprobs: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_inflight: usize,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_inflight: 4,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 250,
        }
    }
}

/// Binding of one backend identity to its transport and limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub id: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<Url>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default)]
    pub capabilities: Capabilities,
    #[serde(default)]
    pub limits: Limits,
    /// Name of the environment variable holding the API credential.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl BackendSpec {
    pub fn mock(id: impl Into<String>) -> Self {
        BackendSpec {
            id: id.into(),
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: None,
            capabilities: Capabilities {
                generate: true,
                score_logprobs: true,
            },
            limits: Limits::default(),
            api_key_env: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.id.trim().is_empty() {
            return Err(BackendError::Config("backend id must be non-empty".into()));
        }
        if self.limits.max_inflight == 0 {
            return Err(BackendError::Config(format!(
                "backend `{}`: limits.max_inflight must be >= 1",
                self.id
            )));
        }
        if self.limits.timeout_secs.is_nan() || self.limits.timeout_secs <= 0.0 {
            return Err(BackendError::Config(format!(
                "backend `{}`: limits.timeout_secs must be positive",
                self.id
            )));
        }
        if self.kind == BackendKind::Remote {
            if self.endpoint.is_none() {
                return Err(BackendError::Config(format!(
                    "remote backend `{}` requires an endpoint",
                    self.id
                )));
            }
            if self.model_name.as_deref().is_none_or(|m| m.trim().is_empty()) {
                return Err(BackendError::Config(format!(
                    "remote backend `{}` requires a model_name",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub stop: Vec<String>,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: 0.0,
            max_output_tokens: 512,
            stop: Vec::new(),
            seed: 0,
        }
    }
}

/// A rendered prompt: ordered role segments plus decoding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub segments: Vec<Segment>,
    pub params: GenParams,
}

impl Prompt {
    pub fn user(text: impl Into<String>) -> Self {
        Prompt {
            segments: vec![Segment {
                role: Role::User,
                text: text.into(),
            }],
            params: GenParams::default(),
        }
    }

    pub fn with_params(mut self, params: GenParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.params.seed = seed;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.params.temperature = temperature;
        self
    }

    /// Flat text of all segments. A lone user segment renders as its own text.
    pub fn text(&self) -> String {
        match self.segments.as_slice() {
            [only] if only.role == Role::User => only.text.clone(),
            segments => segments
                .iter()
                .map(|s| format!("[{}]\n{}", s.role.as_str(), s.text))
                .collect::<Vec<_>>()
                .join("\n\n"),
        }
    }

    /// Text of the final user segment, or empty.
    pub fn user_text(&self) -> &str {
        self.segments
            .iter()
            .rev()
            .find(|s| s.role == Role::User)
            .map(|s| s.text.as_str())
            .unwrap_or("")
    }

    /// Digest over segments and params; the identity used by mock fixtures.
    pub fn digest(&self) -> String {
        digest_json(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub latency_secs: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend `{backend}` lacks capability `{capability}`")]
    Capability { backend: String, capability: &'static str },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend `{backend}` {op} failed after {attempts} attempt(s): {source}")]
    Failed {
        backend: String,
        op: &'static str,
        attempts: u32,
        #[source]
        source: Box<BackendError>,
    },
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Timeout | BackendError::Transport(_))
    }

    /// Attempt count of a terminal call failure.
    pub fn attempts(&self) -> Option<u32> {
        match self {
            BackendError::Failed { attempts, .. } => Some(*attempts),
            _ => None,
        }
    }
}

/// Which operation a cache entry or error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    Generate,
    ScoreTarget,
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Operation {
    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Generate => "generate",
            Operation::ScoreTarget => "score_target",
        }
    }
}

/// One-attempt transport. Retry, caching and concurrency limits live in
/// [`BackendClient`].
#[async_trait]
pub trait Backend: Send + Sync {
    fn spec(&self) -> &BackendSpec;

    async fn generate(&self, prompt: &Prompt) -> Result<Completion, BackendError>;

    /// Per-token log-probabilities of `target` conditioned on `context`.
    async fn score_target(&self, context: &str, target: &str) -> Result<Vec<f64>, BackendError>;
}

/// Whitespace word count, the token unit used by mocks and usage estimates.
pub(crate) fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remote_spec_requires_endpoint_and_model() {
        let mut spec = BackendSpec::mock("r");
        spec.kind = BackendKind::Remote;
        assert!(matches!(spec.validate(), Err(BackendError::Config(m)) if m.contains("endpoint")));
        spec.endpoint = Some(Url::parse("http://localhost:1/v1").unwrap());
        assert!(matches!(spec.validate(), Err(BackendError::Config(m)) if m.contains("model_name")));
        spec.model_name = Some("m".into());
        spec.validate().unwrap();
    }

    #[test]
    fn prompt_digest_depends_on_seed() {
        let a = Prompt::user("hello").with_seed(1);
        let b = Prompt::user("hello").with_seed(2);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }

    #[test]
    fn multi_segment_text_is_tagged() {
        let p = Prompt {
            segments: vec![
                Segment {
                    role: Role::System,
                    text: "be brief".into(),
                },
                Segment {
                    role: Role::User,
                    text: "q".into(),
                },
            ],
            params: GenParams::default(),
        };
        assert_eq!(p.text(), "[system]\nbe brief\n\n[user]\nq");
        assert_eq!(p.user_text(), "q");
    }
}
