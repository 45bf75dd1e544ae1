//! Dual-criteria scoring of rewrite candidates: reader utility (token F1 of
//! the reader's answer), the gold-inclusion hard filter, and factual
//! consistency with the raw retrieval.

mod answer;
mod facts;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use answer::{contains_answer, exact_match, is_answer_punctuation, normalize_answer, token_f1};
pub use facts::{parse_fact_lines, parse_verdict, support_ratio, AtomicFact, Consistency, FactExtraction, Verifier};

use crate::backend::{BackendClient, BackendError, Completion, GenParams};
use crate::corpus::RawContext;
use crate::rewriter::RewriteCandidate;
use crate::seeds::{PromptTemplate, TemplateError, TemplateName};

/// Delimiter after which the reader's answer span starts.
pub const ANSWER_DELIMITER: &str = "Answer:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderAnswer {
    pub text: String,
    pub raw: Completion,
    pub reader_id: String,
    /// The completion had no answer delimiter; the whole completion was used.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub delimiter_missing: bool,
}

/// `(answer, delimiter_missing)`: text after the last delimiter up to the
/// first newline, or the whole trimmed completion.
pub fn extract_answer_span(completion: &str) -> (String, bool) {
    match completion.rfind(ANSWER_DELIMITER) {
        Some(pos) => {
            let rest = completion[pos + ANSWER_DELIMITER.len()..].trim_start();
            let line = rest.split('\n').next().unwrap_or("");
            (line.trim().to_string(), false)
        }
        None => (completion.trim().to_string(), true),
    }
}

/// The QA reader role.
#[derive(Clone)]
pub struct Reader {
    pub client: BackendClient,
    pub template: PromptTemplate,
    pub params: GenParams,
}

impl Reader {
    pub fn new(client: BackendClient, template: PromptTemplate, params: GenParams) -> Result<Self, TemplateError> {
        template.expect(TemplateName::Reader)?;
        Ok(Reader {
            client,
            template,
            params,
        })
    }

    pub async fn read_answer(&self, doc: &str, question: &str) -> Result<ReaderAnswer, BackendError> {
        let prompt = self
            .template
            .render(&BTreeMap::from([("documents", doc), ("question", question)]))
            .map_err(|e| BackendError::Precondition(e.to_string()))?
            .with_params(self.params.clone());
        let raw = self.client.generate(&prompt).await?;
        let (text, delimiter_missing) = extract_answer_span(&raw.text);
        Ok(ReaderAnswer {
            text,
            raw,
            reader_id: self.client.id().to_string(),
            delimiter_missing,
        })
    }
}

/// What the hard filter requires to contain a gold alias.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterTarget {
    /// The reader's predicted answer.
    #[default]
    Prediction,
    /// The rewrite text itself.
    Rewrite,
    /// Both of the above.
    Both,
}

impl FilterTarget {
    pub fn accepts(self, answer_has_gold: bool, rewrite_has_gold: bool) -> bool {
        match self {
            FilterTarget::Prediction => answer_has_gold,
            FilterTarget::Rewrite => rewrite_has_gold,
            FilterTarget::Both => answer_has_gold && rewrite_has_gold,
        }
    }
}

/// The composite of reader utility and factual consistency.
pub fn composite_score(s_perf: f64, s_fact: f64) -> f64 {
    (s_perf + s_fact) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub example_id: String,
    pub iteration: u32,
    pub filter_target: FilterTarget,
    pub passes_hard_filter: bool,
    pub answer_contains_gold: bool,
    pub rewrite_contains_gold: bool,
    pub s_perf: Option<f64>,
    pub s_fact: Option<f64>,
    pub s_total: Option<f64>,
    #[serde(default)]
    pub facts: Vec<AtomicFact>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate_facts: bool,
    pub reader_answer: Option<ReaderAnswer>,
    /// Set when a backend failure prevented scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unscored: Option<String>,
}

impl CandidateScore {
    fn unscored(cand: &RewriteCandidate, filter: FilterTarget, reason: String) -> Self {
        CandidateScore {
            example_id: cand.example_id.clone(),
            iteration: cand.iteration,
            filter_target: filter,
            passes_hard_filter: false,
            answer_contains_gold: false,
            rewrite_contains_gold: false,
            s_perf: None,
            s_fact: None,
            s_total: None,
            facts: Vec::new(),
            degenerate_facts: false,
            reader_answer: None,
            unscored: Some(reason),
        }
    }

    pub fn is_scored(&self) -> bool {
        self.unscored.is_none()
    }
}

/// Scores one candidate. Backend failures yield an unscored record rather
/// than an error so that no candidate silently disappears.
pub async fn score_candidate(
    cand: &RewriteCandidate,
    question: &str,
    golds: &[String],
    raw: &RawContext,
    reader: &Reader,
    verifier: &Verifier,
    filter: FilterTarget,
) -> CandidateScore {
    let answer = match reader.read_answer(&cand.text, question).await {
        Ok(a) => a,
        Err(e) => return CandidateScore::unscored(cand, filter, format!("reader: {e}")),
    };
    let answer_contains_gold = contains_answer(&answer.text, golds);
    let rewrite_contains_gold = contains_answer(&cand.text, golds);
    let passes = filter.accepts(answer_contains_gold, rewrite_contains_gold);
    let mut score = CandidateScore {
        example_id: cand.example_id.clone(),
        iteration: cand.iteration,
        filter_target: filter,
        passes_hard_filter: passes,
        answer_contains_gold,
        rewrite_contains_gold,
        s_perf: None,
        s_fact: None,
        s_total: None,
        facts: Vec::new(),
        degenerate_facts: false,
        reader_answer: None,
        unscored: None,
    };
    if passes {
        let consistency = match verifier.consistency_score(&cand.text, &raw.text).await {
            Ok(c) => c,
            Err(e) => return CandidateScore::unscored(cand, filter, format!("verifier: {e}")),
        };
        let s_perf = token_f1(&answer.text, golds);
        score.s_perf = Some(s_perf);
        score.s_fact = Some(consistency.score);
        score.s_total = Some(composite_score(s_perf, consistency.score));
        score.facts = consistency.facts;
        score.degenerate_facts = consistency.degenerate;
    }
    score.reader_answer = Some(answer);
    score
}
