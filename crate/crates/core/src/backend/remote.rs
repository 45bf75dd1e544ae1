//! OpenAI-compatible HTTP transport.
//!
//! `generate` uses `POST {endpoint}/chat/completions`. `score_target` uses the
//! legacy `POST {endpoint}/completions` surface with `echo: true` and
//! `logprobs`, which returns per-token log-probabilities for the prompt itself;
//! the tokens that fall inside the target span are returned.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use url::Url;

use super::{Backend, BackendError, BackendSpec, Completion, Prompt, TokenLogprob, Usage};

pub struct RemoteBackend {
    spec: BackendSpec,
    http: reqwest::Client,
    base: Url,
    model: String,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    seed: u64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
    #[serde(default)]
    logprobs: Option<ChatLogprobs>,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatLogprobs {
    #[serde(default)]
    content: Option<Vec<ChatTokenLogprob>>,
}

#[derive(Deserialize)]
struct ChatTokenLogprob {
    token: String,
    logprob: f64,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Serialize)]
struct EchoRequest<'a> {
    model: &'a str,
    prompt: String,
    max_tokens: u32,
    temperature: f64,
    echo: bool,
    logprobs: u32,
}

#[derive(Deserialize)]
struct EchoResponse {
    choices: Vec<EchoChoice>,
}

#[derive(Deserialize)]
struct EchoChoice {
    logprobs: Option<EchoLogprobs>,
}

#[derive(Deserialize)]
struct EchoLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Deserialize)]
struct ErrorDetail {
    message: String,
}

impl RemoteBackend {
    pub fn new(spec: BackendSpec) -> Result<Self, BackendError> {
        spec.validate()?;
        let mut base = spec.endpoint.clone().expect("validated");
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        let model = spec.model_name.clone().expect("validated");
        let api_key = match &spec.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("backend `{}`: credential variable `{var}` is not set", spec.id))
            })?),
            None => None,
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(spec.limits.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(RemoteBackend {
            spec,
            http,
            base,
            model,
            api_key,
        })
    }

    async fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let url = self.base.join(path).map_err(|e| BackendError::Config(e.to_string()))?;
        let mut req = self.http.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(map_reqwest)?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(map_reqwest)?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error.message)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(BackendError::Http {
                status: status.as_u16(),
                message,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| BackendError::Protocol(format!("malformed response body: {e}")))
    }
}

fn map_reqwest(err: reqwest::Error) -> BackendError {
    if err.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(err.to_string())
    }
}

/// Selects the log-probabilities of tokens overlapping `[start, end)` (char offsets).
fn target_span(lp: EchoLogprobs, start: usize, end: usize) -> Result<Vec<f64>, BackendError> {
    if lp.tokens.len() != lp.token_logprobs.len() || lp.tokens.len() != lp.text_offset.len() {
        return Err(BackendError::Protocol(format!(
            "token arrays disagree: {} tokens, {} logprobs, {} offsets",
            lp.tokens.len(),
            lp.token_logprobs.len(),
            lp.text_offset.len()
        )));
    }
    let mut out = Vec::new();
    for ((token, logprob), offset) in lp.tokens.iter().zip(&lp.token_logprobs).zip(&lp.text_offset) {
        let token_end = offset + token.chars().count();
        if token_end <= start || *offset >= end {
            continue;
        }
        match logprob {
            Some(v) if *v <= 0.0 => out.push(*v),
            Some(v) if *v < 1e-6 => out.push(0.0),
            Some(v) => {
                return Err(BackendError::Protocol(format!(
                    "positive log-probability {v} for token {token:?}"
                )))
            }
            None => {
                return Err(BackendError::Protocol(format!(
                    "missing log-probability for target token {token:?}"
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(BackendError::Protocol("no tokens returned for the target span".into()));
    }
    Ok(out)
}

#[async_trait]
impl Backend for RemoteBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    async fn generate(&self, prompt: &Prompt) -> Result<Completion, BackendError> {
        let started = Instant::now();
        let body = ChatRequest {
            model: &self.model,
            messages: prompt
                .segments
                .iter()
                .map(|s| ChatMessage {
                    role: s.role.as_str(),
                    content: &s.text,
                })
                .collect(),
            temperature: prompt.params.temperature,
            max_tokens: prompt.params.max_output_tokens,
            stop: &prompt.params.stop,
            seed: prompt.params.seed,
        };
        let resp: ChatResponse = self.post("chat/completions", &body).await?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
        let token_logprobs = choice.logprobs.and_then(|l| l.content).map(|toks| {
            toks.into_iter()
                .map(|t| TokenLogprob {
                    token: t.token,
                    logprob: t.logprob.min(0.0),
                })
                .collect()
        });
        Ok(Completion {
            text: choice.message.content.unwrap_or_default(),
            token_logprobs,
            usage: resp
                .usage
                .map(|u| Usage {
                    prompt_tokens: u.prompt_tokens,
                    output_tokens: u.completion_tokens,
                })
                .unwrap_or_default(),
            latency_secs: started.elapsed().as_secs_f64(),
        })
    }

    async fn score_target(&self, context: &str, target: &str) -> Result<Vec<f64>, BackendError> {
        let start = context.chars().count();
        let end = start + target.chars().count();
        let body = EchoRequest {
            model: &self.model,
            prompt: format!("{context}{target}"),
            max_tokens: 1,
            temperature: 0.0,
            echo: true,
            logprobs: 0,
        };
        let resp: EchoResponse = self.post("completions", &body).await?;
        let logprobs = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .ok_or_else(|| BackendError::Protocol("response carries no prompt log-probabilities".into()))?;
        target_span(logprobs, start, end)
    }
}
