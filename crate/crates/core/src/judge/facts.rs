//! Atomic-fact decomposition and entailment checks against raw evidence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendClient, BackendError, GenParams};
use crate::seeds::{PromptTemplate, TemplateError, TemplateName};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supported: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier_raw: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparseable: bool,
}

impl AtomicFact {
    pub fn new(statement: impl Into<String>) -> Self {
        AtomicFact {
            statement: statement.into(),
            supported: None,
            verifier_raw: None,
            unparseable: false,
        }
    }

    pub fn verified(statement: impl Into<String>, supported: bool) -> Self {
        AtomicFact {
            supported: Some(supported),
            ..Self::new(statement)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactExtraction {
    pub facts: Vec<AtomicFact>,
    /// Set when the completion yielded no facts.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub score: f64,
    pub facts: Vec<AtomicFact>,
    /// Set when no facts could be extracted; the score is then 0.
    pub degenerate: bool,
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    for marker in ["- ", "* ", "\u{2022} ", "\u{2013} ", "\u{2014} "] {
        if let Some(rest) = line.strip_prefix(marker) {
            return rest.trim_start();
        }
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return rest.trim_start();
        }
    }
    line
}

/// One fact per non-blank line, list markers removed. Echoed section headers
/// such as `[Atomic Facts]:` are dropped.
pub fn parse_fact_lines(completion: &str) -> Vec<String> {
    completion
        .lines()
        .map(strip_list_marker)
        .filter(|l| !l.is_empty())
        .filter(|l| !(l.starts_with('[') && (l.ends_with("]:") || l.ends_with(']'))))
        .map(str::to_string)
        .collect()
}

/// `(supported, unparseable)` for a verifier completion.
pub fn parse_verdict(completion: &str) -> (bool, bool) {
    let t = completion.trim().to_lowercase();
    let supported = t.starts_with("true");
    (supported, !(supported || t.starts_with("false")))
}

/// Supported fraction of verified facts; `(0.0, true)` when there are none.
pub fn support_ratio(facts: &[AtomicFact]) -> (f64, bool) {
    if facts.is_empty() {
        return (0.0, true);
    }
    let supported = facts.iter().filter(|f| f.supported == Some(true)).count();
    (supported as f64 / facts.len() as f64, false)
}

/// The verifier role: fact extraction plus per-fact entailment.
#[derive(Clone)]
pub struct Verifier {
    pub client: BackendClient,
    pub extract_template: PromptTemplate,
    pub verify_template: PromptTemplate,
    pub params: GenParams,
}

impl Verifier {
    pub fn new(
        client: BackendClient,
        extract_template: PromptTemplate,
        verify_template: PromptTemplate,
        params: GenParams,
    ) -> Result<Self, TemplateError> {
        extract_template.expect(TemplateName::FactExtract)?;
        verify_template.expect(TemplateName::FactVerify)?;
        Ok(Verifier {
            client,
            extract_template,
            verify_template,
            params,
        })
    }

    pub async fn extract_facts(&self, doc: &str) -> Result<FactExtraction, BackendError> {
        if doc.trim().is_empty() {
            return Err(BackendError::Precondition(
                "fact extraction needs a non-empty document".into(),
            ));
        }
        let prompt = self
            .extract_template
            .render(&BTreeMap::from([("document", doc)]))
            .map_err(|e| BackendError::Precondition(e.to_string()))?
            .with_params(self.params.clone());
        let completion = self.client.generate(&prompt).await?;
        let facts: Vec<AtomicFact> = parse_fact_lines(&completion.text)
            .into_iter()
            .map(AtomicFact::new)
            .collect();
        Ok(FactExtraction {
            empty: facts.is_empty(),
            facts,
        })
    }

    pub async fn verify_fact(&self, fact: &AtomicFact, evidence: &str) -> Result<AtomicFact, BackendError> {
        if fact.statement.trim().is_empty() {
            return Err(BackendError::Precondition("fact statement is empty".into()));
        }
        let prompt = self
            .verify_template
            .render(&BTreeMap::from([
                ("evidence", evidence),
                ("statement", fact.statement.as_str()),
            ]))
            .map_err(|e| BackendError::Precondition(e.to_string()))?
            .with_params(self.params.clone());
        let completion = self.client.generate(&prompt).await?;
        let (supported, unparseable) = parse_verdict(&completion.text);
        if unparseable {
            tracing::debug!(statement = %fact.statement, raw = %completion.text, "unparseable verdict counted as unsupported");
        }
        Ok(AtomicFact {
            statement: fact.statement.clone(),
            supported: Some(supported),
            verifier_raw: Some(completion.text),
            unparseable,
        })
    }

    /// Ratio of facts in `doc` supported by `evidence`.
    pub async fn consistency_score(&self, doc: &str, evidence: &str) -> Result<Consistency, BackendError> {
        if doc.trim().is_empty() {
            return Ok(Consistency {
                score: 0.0,
                facts: Vec::new(),
                degenerate: true,
            });
        }
        let extraction = self.extract_facts(doc).await?;
        let verified = futures::future::join_all(extraction.facts.iter().map(|f| self.verify_fact(f, evidence)))
            .await
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let (score, degenerate) = support_ratio(&verified);
        Ok(Consistency {
            score,
            facts: verified,
            degenerate,
        })
    }
}
