//! Stylistic seeds: background-style documents generated for unrelated
//! training questions, used as few-shot exemplars for the rewriter.

mod template;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use template::{PromptTemplate, TemplateError, TemplateName, TemplateSet};

use crate::backend::{BackendClient, BackendError, Completion, GenParams, Prompt};
use crate::corpus::QaExample;
use crate::judge::normalize_answer;
use crate::records::{self, digest_json, RecordError, SCHEMA_SEEDS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylisticSeed {
    pub seed_question: String,
    pub background_doc: String,
    pub generator_id: String,
    pub created_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarBank {
    pub seeds: Vec<StylisticSeed>,
    pub bank_id: String,
}

impl ExemplarBank {
    pub fn new(seeds: Vec<StylisticSeed>) -> Self {
        let bank_id = digest_json(&seeds);
        ExemplarBank { seeds, bank_id }
    }

    /// An empty bank renders zero-shot rewrite prompts.
    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// Whether `question` collides with an exemplar question.
    pub fn contains_question(&self, question: &str) -> bool {
        let q = normalize_answer(question);
        self.seeds.iter().any(|s| normalize_answer(&s.seed_question) == q)
    }

    pub fn save(&self, path: &Path) -> Result<(), RecordError> {
        records::write_records(path, SCHEMA_SEEDS, &self.seeds)
    }

    pub fn load(path: &Path) -> Result<Self, RecordError> {
        Ok(Self::new(records::read_records(path, SCHEMA_SEEDS)?))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SeedError {
    #[error("need {wanted} distinct train questions, found {available}")]
    NotEnoughQuestions { wanted: usize, available: usize },
    #[error("M must be >= 1")]
    ZeroSeeds,
    #[error("seed generation failed for indices {indices:?}: {first}")]
    Generation { indices: Vec<usize>, first: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// The generator role: renders the background-document template for a question.
#[derive(Clone)]
pub struct Generator {
    pub client: BackendClient,
    pub template: PromptTemplate,
    pub params: GenParams,
}

impl Generator {
    pub fn new(client: BackendClient, template: PromptTemplate, params: GenParams) -> Result<Self, TemplateError> {
        template.expect(TemplateName::Gen)?;
        Ok(Generator {
            client,
            template,
            params,
        })
    }

    pub fn prompt(&self, question: &str, seed: u64) -> Result<Prompt, TemplateError> {
        let bindings = BTreeMap::from([("question", question)]);
        Ok(self
            .template
            .render(&bindings)?
            .with_params(self.params.clone())
            .with_seed(seed))
    }

    /// A background-style document for `question` under the role's base seed.
    pub async fn background(&self, question: &str) -> Result<Completion, BackendError> {
        let prompt = self
            .prompt(question, self.params.seed)
            .map_err(|e| BackendError::Precondition(e.to_string()))?;
        self.client.generate(&prompt).await
    }
}

/// Samples `m` distinct train questions without replacement and generates one
/// background document per question.
pub async fn generate_seeds(
    train: &[QaExample],
    m: usize,
    generator: &Generator,
    rng_seed: u64,
) -> Result<ExemplarBank, SeedError> {
    if m == 0 {
        return Err(SeedError::ZeroSeeds);
    }
    let mut seen = HashSet::new();
    let distinct: Vec<&QaExample> = train
        .iter()
        .filter(|ex| seen.insert(normalize_answer(&ex.question)))
        .collect();
    if distinct.len() < m {
        return Err(SeedError::NotEnoughQuestions {
            wanted: m,
            available: distinct.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let picked: Vec<&QaExample> = sample(&mut rng, distinct.len(), m)
        .into_iter()
        .map(|i| distinct[i])
        .collect();

    let prompts = picked
        .iter()
        .map(|ex| generator.prompt(&ex.question, rng_seed))
        .collect::<Result<Vec<_>, _>>()?;
    let results = futures::future::join_all(prompts.iter().map(|p| generator.client.generate(p))).await;

    let mut seeds = Vec::with_capacity(m);
    let mut failed = Vec::new();
    let mut first = None;
    for (i, (ex, result)) in picked.iter().zip(results).enumerate() {
        match result {
            Ok(c) if !c.text.trim().is_empty() => seeds.push(StylisticSeed {
                seed_question: ex.question.clone(),
                background_doc: c.text.trim().to_string(),
                generator_id: generator.client.id().to_string(),
                created_seed: rng_seed,
            }),
            Ok(_) => {
                failed.push(i);
                first.get_or_insert_with(|| "empty background document".to_string());
            }
            Err(e) => {
                failed.push(i);
                first.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if !failed.is_empty() {
        return Err(SeedError::Generation {
            indices: failed,
            first: first.unwrap_or_default(),
        });
    }
    Ok(ExemplarBank::new(seeds))
}

/// Formats exemplars as (question, document) blocks in bank order.
pub fn format_exemplars(seeds: &[StylisticSeed]) -> String {
    seeds
        .iter()
        .map(|s| {
            format!(
                "[Example Question]\n{}\n\n[Example Background]\n{}\n\n",
                s.seed_question.trim(),
                s.background_doc.trim()
            )
        })
        .collect()
}

/// Renders a rewrite prompt: exemplars first, then the target question and
/// context. Refuses a bank that contains the target question.
pub fn render_rewrite(
    template: &PromptTemplate,
    bank: &ExemplarBank,
    context: &str,
    question: &str,
) -> Result<Prompt, TemplateError> {
    template.expect(TemplateName::Rewrite)?;
    if let Some(seed) = bank
        .seeds
        .iter()
        .find(|s| normalize_answer(&s.seed_question) == normalize_answer(question))
    {
        return Err(TemplateError::ExemplarOverlap(seed.seed_question.clone()));
    }
    let exemplars = format_exemplars(&bank.seeds);
    let bindings = BTreeMap::from([
        ("exemplars", exemplars.as_str()),
        ("question", question),
        ("context", context),
    ]);
    template.render(&bindings)
}
