//! Iterative rewriting: round 1 rewrites the raw context, each later round
//! rewrites the head of the previous round's output.

use serde::{Deserialize, Serialize};

use crate::backend::{BackendClient, BackendError, GenParams};
use crate::corpus::RawContext;
use crate::records::digest_json;
use crate::seeds::{render_rewrite, ExemplarBank, PromptTemplate, TemplateError, TemplateName};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteCandidate {
    pub example_id: String,
    pub iteration: u32,
    pub text: String,
    /// Digest of the exact prompt sent for this round.
    pub input_digest: String,
    /// Word count of the context this round rewrote.
    pub truncated_input_words: usize,
    /// The rewriter returned nothing twice; the previous text was carried over.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub carried_forward: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub example_id: String,
    pub candidates: Vec<RewriteCandidate>,
    pub config_digest: String,
    /// Why the pool holds fewer candidates than requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortfall: Option<String>,
}

impl CandidatePool {
    /// A pool that was never run, e.g. because the question is an exemplar.
    pub fn skipped(example_id: &str, config_digest: &str, reason: impl Into<String>) -> Self {
        CandidatePool {
            example_id: example_id.to_string(),
            candidates: Vec::new(),
            config_digest: config_digest.to_string(),
            shortfall: Some(reason.into()),
        }
    }

    pub fn last(&self) -> Option<&RewriteCandidate> {
        self.candidates.last()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RewriteError {
    #[error("rounds and truncation length must both be >= 1 (got N={rounds}, l={limit})")]
    BadConfig { rounds: usize, limit: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Keeps the first `limit` whitespace-delimited words, preserving the
/// original text up to the end of the last kept word.
pub fn truncate_words(text: &str, limit: usize) -> &str {
    let mut seen = 0;
    let mut in_word = false;
    for (idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if in_word {
                seen += 1;
                if seen == limit {
                    return &text[..idx];
                }
            }
            in_word = false;
        } else {
            in_word = true;
        }
    }
    text
}

pub fn pool_config_digest(
    bank_id: &str,
    rounds: usize,
    limit: usize,
    template_version: &str,
    backend_id: &str,
) -> String {
    digest_json(&(bank_id, rounds, limit, template_version, backend_id))
}

/// The rewriter role.
#[derive(Clone)]
pub struct Rewriter {
    pub client: BackendClient,
    pub template: PromptTemplate,
    pub params: GenParams,
}

impl Rewriter {
    pub fn new(client: BackendClient, template: PromptTemplate, params: GenParams) -> Result<Self, TemplateError> {
        template.expect(TemplateName::Rewrite)?;
        Ok(Rewriter {
            client,
            template,
            params,
        })
    }

    pub fn config_digest(&self, bank: &ExemplarBank, rounds: usize, limit: usize) -> String {
        pool_config_digest(&bank.bank_id, rounds, limit, &self.template.version, self.client.id())
    }

    async fn round(&self, prompt: &crate::backend::Prompt) -> Result<Option<String>, BackendError> {
        let first = self.client.generate(prompt).await?;
        if !first.text.trim().is_empty() {
            return Ok(Some(first.text.trim().to_string()));
        }
        let retry = prompt.clone().with_seed(prompt.params.seed.wrapping_add(1));
        let second = self.client.generate(&retry).await?;
        Ok(Some(second.text.trim().to_string()).filter(|t| !t.is_empty()))
    }

    /// Produces up to `rounds` candidates for one question.
    pub async fn iterative_rewrite(
        &self,
        question: &str,
        raw: &RawContext,
        bank: &ExemplarBank,
        rounds: usize,
        limit: usize,
    ) -> Result<CandidatePool, RewriteError> {
        if rounds == 0 || limit == 0 {
            return Err(RewriteError::BadConfig { rounds, limit });
        }
        let mut pool = CandidatePool {
            example_id: raw.source_example.clone(),
            candidates: Vec::with_capacity(rounds),
            config_digest: self.config_digest(bank, rounds, limit),
            shortfall: None,
        };
        let mut previous = raw.text.clone();
        for n in 1..=rounds {
            let input = if n == 1 {
                raw.text.as_str()
            } else {
                truncate_words(&previous, limit)
            };
            let prompt = render_rewrite(&self.template, bank, input, question)?.with_params(self.params.clone());
            let input_words = input.split_whitespace().count();
            let output = match self.round(&prompt).await {
                Ok(o) => o,
                Err(e) => {
                    pool.shortfall = Some(format!("round {n}: {e}"));
                    break;
                }
            };
            let (text, carried_forward) = match output {
                Some(t) => (t, false),
                None => (previous.clone(), true),
            };
            pool.candidates.push(RewriteCandidate {
                example_id: raw.source_example.clone(),
                iteration: n as u32,
                text: text.clone(),
                input_digest: prompt.digest(),
                truncated_input_words: input_words,
                carried_forward,
            });
            previous = text;
        }
        Ok(pool)
    }
}
