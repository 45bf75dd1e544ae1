//! Document- and reader-level evaluation: accuracy and token F1 over a corpus,
//! the question-reconstruction style score, the factual inconsistency rate,
//! context-conflicting accuracy and per-stage latency statistics.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use futures::stream::{self, StreamExt, TryStreamExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendClient, BackendError};
use crate::corpus::{concat_context, CcExample, QaExample, RawContext};
use crate::judge::{contains_answer, token_f1, AtomicFact, Reader, Verifier};
use crate::records::{self, digest_json, RecordError, SCHEMA_REPORT};
use crate::rewriter::{RewriteError, Rewriter};
use crate::seeds::{ExemplarBank, PromptTemplate, TemplateError, TemplateName};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
    #[error("example `{id}`: {message}")]
    Example { id: String, message: String },
    #[error("report failed validation: {0}")]
    InvalidReport(String),
}

/// How trustworthy a metric is: mock-backed numbers only verify mechanics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunLabel {
    MechanismVerified,
    BackendDependent,
}

/// A report file: schema tag, report kind, label and body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvelope<T> {
    pub schema: String,
    pub kind: String,
    pub label: RunLabel,
    pub body: T,
}

pub fn write_report<T: Serialize>(path: &Path, kind: &str, label: RunLabel, body: &T) -> Result<(), RecordError> {
    let envelope = ReportEnvelope {
        schema: SCHEMA_REPORT.to_string(),
        kind: kind.to_string(),
        label,
        body,
    };
    let mut json = serde_json::to_vec_pretty(&envelope).expect("reports serialize");
    json.push(b'\n');
    records::write_atomic(path, &json)
}

pub fn read_report<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<ReportEnvelope<T>, EvalError> {
    let bytes = std::fs::read(path).map_err(|e| RecordError::io(path, e))?;
    let envelope: ReportEnvelope<T> = serde_json::from_slice(&bytes).map_err(|e| RecordError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if envelope.schema != SCHEMA_REPORT || envelope.kind != kind {
        return Err(EvalError::InvalidReport(format!(
            "expected {SCHEMA_REPORT}/{kind}, found {}/{}",
            envelope.schema, envelope.kind
        )));
    }
    Ok(envelope)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocSource {
    Retrieved,
    Generated,
    #[serde(rename = "retrieved+generated")]
    RetrievedGenerated,
    Rewritten,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub id: String,
    pub acc_hit: bool,
    pub f1: f64,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus_id: String,
    pub doc_source: DocSource,
    pub acc: f64,
    pub f1: f64,
    pub n: usize,
    pub skipped: Vec<Skipped>,
    pub per_example: Vec<ExampleResult>,
}

impl EvalReport {
    pub fn from_results(
        corpus_id: &str,
        doc_source: DocSource,
        per_example: Vec<ExampleResult>,
        skipped: Vec<Skipped>,
    ) -> Self {
        let n = per_example.len();
        let (acc, f1) = if n == 0 {
            (0.0, 0.0)
        } else {
            (
                per_example.iter().filter(|e| e.acc_hit).count() as f64 / n as f64,
                per_example.iter().map(|e| e.f1).sum::<f64>() / n as f64,
            )
        };
        EvalReport {
            corpus_id: corpus_id.to_string(),
            doc_source,
            acc,
            f1,
            n,
            skipped,
            per_example,
        }
    }
}

/// The document an example contributes under `source`. `extra` carries
/// rewritten, custom or externally generated documents keyed by example id.
pub fn document_for(
    example: &QaExample,
    source: DocSource,
    extra: &HashMap<String, String>,
    separator: &str,
) -> Result<String, String> {
    let generated = || {
        example
            .generated_doc
            .clone()
            .or_else(|| extra.get(&example.id).cloned())
            .ok_or_else(|| "no generated document".to_string())
    };
    match source {
        DocSource::Retrieved => Ok(concat_context(example, separator).text),
        DocSource::Generated => generated(),
        DocSource::RetrievedGenerated => Ok(format!(
            "{}{separator}{}",
            concat_context(example, separator).text,
            generated()?
        )),
        DocSource::Rewritten | DocSource::Custom => extra.get(&example.id).cloned().ok_or_else(|| {
            format!(
                "no {} document",
                if source == DocSource::Rewritten {
                    "rewritten"
                } else {
                    "custom"
                }
            )
        }),
    }
}

/// Reader accuracy (normalized answer containment) and token F1 over a corpus.
pub async fn eval_reader(
    corpus_id: &str,
    corpus: &[QaExample],
    source: DocSource,
    extra: &HashMap<String, String>,
    separator: &str,
    reader: &Reader,
    concurrency: usize,
) -> Result<EvalReport, EvalError> {
    let outcomes: Vec<Result<ExampleResult, Skipped>> = stream::iter(corpus)
        .map(|ex| async move {
            let doc = match document_for(ex, source, extra, separator) {
                Ok(d) => d,
                Err(reason) => {
                    return Ok(Err(Skipped {
                        id: ex.id.clone(),
                        reason,
                    }))
                }
            };
            let answer = reader.read_answer(&doc, &ex.question).await?;
            Ok::<_, EvalError>(Ok(ExampleResult {
                id: ex.id.clone(),
                acc_hit: contains_answer(&answer.text, &ex.gold_answers),
                f1: token_f1(&answer.text, &ex.gold_answers),
                answer: answer.text,
            }))
        })
        .buffered(concurrency.max(1))
        .try_collect()
        .await?;
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(s) => skipped.push(s),
        }
    }
    Ok(EvalReport::from_results(corpus_id, source, results, skipped))
}

/// The sequence-scoring role used for the style score.
#[derive(Clone)]
pub struct Scorer {
    pub client: BackendClient,
    pub template: PromptTemplate,
}

impl Scorer {
    pub fn new(client: BackendClient, template: PromptTemplate) -> Result<Self, TemplateError> {
        template.expect(TemplateName::Reconstruct)?;
        Ok(Scorer { client, template })
    }

    /// Conditioning context for reconstructing a question from `doc`.
    pub fn context(&self, doc: &str) -> Result<String, TemplateError> {
        let mut text = self.template.render_text(&BTreeMap::from([("document", doc)]))?;
        while text.ends_with(['\n', ' ']) {
            text.pop();
        }
        text.push('\n');
        Ok(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleReport {
    pub doc_digest: String,
    pub s_orient: f64,
    pub token_count: usize,
}

/// Mean per-token log-probability of the question given the document.
pub async fn style_score(doc: &str, question: &str, scorer: &Scorer) -> Result<StyleReport, EvalError> {
    if question.trim().is_empty() {
        return Err(BackendError::Precondition("style score needs a non-empty question".into()).into());
    }
    let context = scorer.context(doc)?;
    let logprobs = scorer.client.score_target(&context, question).await?;
    if logprobs.is_empty() {
        return Err(BackendError::Protocol("scorer returned no token log-probabilities".into()).into());
    }
    Ok(StyleReport {
        doc_digest: digest_json(doc),
        s_orient: logprobs.iter().sum::<f64>() / logprobs.len() as f64,
        token_count: logprobs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactReport {
    pub doc_digest: String,
    pub r_inc: f64,
    pub s_fact: f64,
    pub degenerate: bool,
    pub facts: Vec<AtomicFact>,
}

/// Fraction of the document's atomic facts not supported by `evidence`.
pub async fn inconsistency_rate(doc: &str, evidence: &str, verifier: &Verifier) -> Result<FactReport, EvalError> {
    let consistency = verifier.consistency_score(doc, evidence).await?;
    Ok(FactReport {
        doc_digest: digest_json(doc),
        r_inc: 1.0 - consistency.score,
        s_fact: consistency.score,
        degenerate: consistency.degenerate,
        facts: consistency.facts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CcVariant {
    Raw,
    Rewritten,
}

/// Presentation order of the two conflicting documents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CcOrder {
    /// Retrieved (or rewritten) document first, generated document second.
    #[default]
    Fixed,
    /// Per-example coin flip under the run seed.
    Shuffled { seed: u64 },
}

impl CcOrder {
    /// Whether the generated document comes first for this example.
    pub fn generated_first(self, example_id: &str) -> bool {
        match self {
            CcOrder::Fixed => false,
            CcOrder::Shuffled { seed } => {
                let digest = digest_json(&(seed, example_id));
                let mut bytes = [0u8; 8];
                bytes.copy_from_slice(&hex::decode(&digest[..16]).expect("hex"));
                ChaCha8Rng::seed_from_u64(u64::from_le_bytes(bytes)).random::<bool>()
            }
        }
    }
}

/// What the rewritten CC variant needs to rewrite the correct document.
pub struct RewriteSetup<'a> {
    pub rewriter: &'a Rewriter,
    pub bank: &'a ExemplarBank,
    pub rounds: usize,
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcResult {
    pub id: String,
    pub hit: bool,
    pub answer: String,
    pub generated_first: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcReport {
    pub variant: CcVariant,
    pub order: CcOrder,
    pub accuracy: f64,
    pub n: usize,
    pub per_example: Vec<CcResult>,
}

/// Reader accuracy when a correct document competes with an incorrect
/// generated one.
pub async fn eval_cc(
    cc_set: &[CcExample],
    variant: CcVariant,
    reader: &Reader,
    rewrite: Option<&RewriteSetup<'_>>,
    order: CcOrder,
    separator: &str,
    concurrency: usize,
) -> Result<CcReport, EvalError> {
    if cc_set.is_empty() {
        return Err(EvalError::Empty("context-conflicting set is empty"));
    }
    if variant == CcVariant::Rewritten && rewrite.is_none() {
        return Err(EvalError::Empty("rewritten variant needs a rewrite setup"));
    }
    let per_example: Vec<CcResult> = stream::iter(cc_set)
        .map(|cc| async move {
            let correct = match variant {
                CcVariant::Raw => cc.correct_retrieved.clone(),
                CcVariant::Rewritten => {
                    let setup = rewrite.expect("checked above");
                    let raw = RawContext {
                        text: cc.correct_retrieved.clone(),
                        source_example: cc.base.clone(),
                        passage_count: 1,
                    };
                    let pool = setup
                        .rewriter
                        .iterative_rewrite(&cc.question, &raw, setup.bank, setup.rounds, setup.limit)
                        .await?;
                    match pool.last() {
                        Some(c) => c.text.clone(),
                        None => {
                            return Err(EvalError::Example {
                                id: cc.base.clone(),
                                message: pool.shortfall.unwrap_or_else(|| "rewrite produced no candidate".into()),
                            })
                        }
                    }
                }
            };
            let generated_first = order.generated_first(&cc.base);
            let docs = if generated_first {
                format!("{}{separator}{}", cc.incorrect_generated, correct)
            } else {
                format!("{}{separator}{}", correct, cc.incorrect_generated)
            };
            let answer = reader.read_answer(&docs, &cc.question).await?;
            Ok(CcResult {
                id: cc.base.clone(),
                hit: contains_answer(&answer.text, &cc.gold_answers),
                answer: answer.text,
                generated_first,
            })
        })
        .buffered(concurrency.max(1))
        .try_collect()
        .await?;
    let n = per_example.len();
    Ok(CcReport {
        variant,
        order,
        accuracy: per_example.iter().filter(|r| r.hit).count() as f64 / n as f64,
        n,
        per_example,
    })
}

/// One timed unit of work within a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpan {
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    pub secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageLatency {
    pub mean_secs: f64,
    pub p50_secs: f64,
    pub p95_secs: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyReport {
    pub stages: BTreeMap<String, StageLatency>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Nearest-rank percentile of an ascending slice.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Per-stage mean, p50 and p95 of recorded spans. Every stage in `expected`
/// appears in the report, with `n = 0` and a warning when it has no spans.
pub fn measure_latency(spans: &[StageSpan], expected: &[&str]) -> LatencyReport {
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for span in spans {
        grouped.entry(span.stage.clone()).or_default().push(span.secs.max(0.0));
    }
    let mut warnings = Vec::new();
    for stage in expected {
        if !grouped.contains_key(*stage) {
            warnings.push(format!("stage `{stage}` has no recorded spans"));
            grouped.insert(stage.to_string(), Vec::new());
        }
    }
    let stages = grouped
        .into_iter()
        .map(|(stage, mut secs)| {
            let stats = if secs.is_empty() {
                StageLatency {
                    mean_secs: 0.0,
                    p50_secs: 0.0,
                    p95_secs: 0.0,
                    n: 0,
                }
            } else {
                secs.sort_by(|a, b| a.total_cmp(b));
                StageLatency {
                    mean_secs: secs.iter().sum::<f64>() / secs.len() as f64,
                    p50_secs: nearest_rank(&secs, 0.50),
                    p95_secs: nearest_rank(&secs, 0.95),
                    n: secs.len(),
                }
            };
            (stage, stats)
        })
        .collect();
    LatencyReport { stages, warnings }
}

impl LatencyReport {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (stage, s) in &self.stages {
            let values = [s.mean_secs, s.p50_secs, s.p95_secs];
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(EvalError::InvalidReport(format!(
                    "stage `{stage}` has a negative or non-finite duration"
                )));
            }
            if s.n == 0 && values.iter().any(|v| *v != 0.0) {
                return Err(EvalError::InvalidReport(format!(
                    "stage `{stage}` has n = 0 but non-zero statistics"
                )));
            }
            if s.p50_secs > s.p95_secs {
                return Err(EvalError::InvalidReport(format!("stage `{stage}` has p50 > p95")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backend::{BackendSpec, GenParams, MockBackend, MockFixtures, Prompt};
    use crate::corpus::{Passage, Split};
    use crate::seeds::TemplateSet;

    fn span(stage: &str, secs: f64) -> StageSpan {
        StageSpan {
            stage: stage.into(),
            item: None,
            secs,
        }
    }

    #[test]
    fn latency_stats() {
        let r = measure_latency(
            &[span("rewrite", 1.0), span("rewrite", 2.0), span("rewrite", 3.0)],
            &["rewrite"],
        );
        let s = &r.stages["rewrite"];
        assert_eq!((s.mean_secs, s.p50_secs, s.p95_secs, s.n), (2.0, 2.0, 3.0, 3));
        r.validate().unwrap();
    }

    #[test]
    fn latency_without_spans() {
        let r = measure_latency(&[], &["score"]);
        assert_eq!(r.stages["score"].n, 0);
        assert_eq!(r.warnings.len(), 1);
        r.validate().unwrap();
        assert_eq!(r, measure_latency(&[], &["score"]));
    }

    fn scorer(fixtures: MockFixtures) -> Scorer {
        let client = BackendClient::new(Arc::new(
            MockBackend::new(BackendSpec::mock("s")).with_fixtures(fixtures),
        ))
        .unwrap();
        Scorer::new(
            client,
            TemplateSet::builtin()
                .get(TemplateName::Reconstruct, "v1")
                .unwrap()
                .clone(),
        )
        .unwrap()
    }

    #[tokio::test]
    async fn style_score_is_the_mean() {
        let probe = scorer(MockFixtures::default());
        let ctx = probe.context("doc").unwrap();
        let mut fx = MockFixtures::default();
        fx.score
            .insert(MockFixtures::score_key(&ctx, "who is spike"), vec![-1.0, -2.0, -3.0]);
        fx.score.insert(MockFixtures::score_key(&ctx, "why"), vec![-0.5]);
        let s = scorer(fx);
        let r = style_score("doc", "who is spike", &s).await.unwrap();
        assert_eq!(r.s_orient, -2.0);
        assert_eq!(r.token_count, 3);
        assert_eq!(style_score("doc", "why", &s).await.unwrap().s_orient, -0.5);
        assert!(ctx.contains("generate a question that can be answered"));
    }

    #[tokio::test]
    async fn style_score_needs_capability() {
        let mut spec = BackendSpec::mock("s");
        spec.capabilities.score_logprobs = false;
        let client = BackendClient::new(Arc::new(MockBackend::new(spec))).unwrap();
        let s = Scorer::new(
            client,
            TemplateSet::builtin()
                .get(TemplateName::Reconstruct, "v1")
                .unwrap()
                .clone(),
        )
        .unwrap();
        let err = style_score("doc", "who", &s).await.unwrap_err();
        assert!(err.to_string().contains("score_logprobs"));
    }

    fn reader_answering(f: impl Fn(&Prompt) -> String + Send + Sync + 'static) -> Reader {
        let mock = MockBackend::new(BackendSpec::mock("reader")).with_responder(Arc::new(move |p| Some(f(p))));
        Reader::new(
            BackendClient::new(Arc::new(mock)).unwrap(),
            TemplateSet::builtin().get(TemplateName::Reader, "v1").unwrap().clone(),
            GenParams::default(),
        )
        .unwrap()
    }

    fn qa(id: &str, answer: &str) -> QaExample {
        QaExample {
            id: id.into(),
            question: format!("question {id}?"),
            gold_answers: vec![answer.into()],
            passages: vec![Passage {
                doc_id: "d".into(),
                title: None,
                text: format!("passage for {id}"),
                rank: 1,
                score: None,
            }],
            split: Split::Test,
            generated_doc: None,
        }
    }

    #[tokio::test]
    async fn perfect_and_empty_readers() {
        let corpus: Vec<_> = (0..10).map(|i| qa(&format!("q{i}"), &format!("gold{i}"))).collect();
        let good = reader_answering(|p| {
            let id = p
                .user_text()
                .split("question q")
                .nth(1)
                .unwrap()
                .split('?')
                .next()
                .unwrap()
                .to_string();
            format!("Answer: gold{id}")
        });
        let r = eval_reader("c", &corpus, DocSource::Retrieved, &HashMap::new(), "\n", &good, 4)
            .await
            .unwrap();
        assert_eq!((r.acc, r.f1, r.n), (1.0, 1.0, 10));

        let empty = reader_answering(|_| "Answer:".into());
        let r = eval_reader("c", &corpus, DocSource::Retrieved, &HashMap::new(), "\n", &empty, 4)
            .await
            .unwrap();
        assert_eq!((r.acc, r.f1), (0.0, 0.0));
    }

    #[tokio::test]
    async fn half_correct_reader() {
        let corpus: Vec<_> = (0..4).map(|i| qa(&format!("q{i}"), "Spike")).collect();
        let reader = reader_answering(|p| {
            if p.user_text().contains("question q0?") || p.user_text().contains("question q1?") {
                "Answer: Spike".into()
            } else {
                "Answer: ".into()
            }
        });
        let r = eval_reader("c", &corpus, DocSource::Retrieved, &HashMap::new(), "\n", &reader, 2)
            .await
            .unwrap();
        assert_eq!((r.acc, r.f1, r.n), (0.5, 0.5, 4));
    }

    #[tokio::test]
    async fn missing_documents_are_skipped_and_counted() {
        let mut corpus: Vec<_> = (0..3).map(|i| qa(&format!("q{i}"), "x")).collect();
        corpus[1].generated_doc = Some("generated".into());
        let reader = reader_answering(|_| "Answer: x".into());
        let r = eval_reader("c", &corpus, DocSource::Generated, &HashMap::new(), "\n", &reader, 2)
            .await
            .unwrap();
        assert_eq!(r.n, 1);
        assert_eq!(r.skipped.len(), 2);
        assert_eq!(r.n + r.skipped.len(), corpus.len());
    }

    #[tokio::test]
    async fn empty_cc_set_is_an_error() {
        let reader = reader_answering(|_| "Answer: x".into());
        assert!(matches!(
            eval_cc(&[], CcVariant::Raw, &reader, None, CcOrder::Fixed, "\n\n", 1).await,
            Err(EvalError::Empty(_))
        ));
    }

    #[tokio::test]
    async fn single_cc_with_correct_reader() {
        let cc = CcExample {
            base: "q".into(),
            question: "who?".into(),
            gold_answers: vec!["Spike".into()],
            correct_retrieved: "Spike is the dog.".into(),
            incorrect_generated: "Butch is the dog.".into(),
            generated_only_answer: "Butch".into(),
        };
        let reader = reader_answering(|_| "Answer: Spike".into());
        let r = eval_cc(&[cc], CcVariant::Raw, &reader, None, CcOrder::Fixed, "\n\n", 1)
            .await
            .unwrap();
        assert_eq!((r.accuracy, r.n), (1.0, 1));
    }

    #[test]
    fn shuffled_order_is_deterministic() {
        let o = CcOrder::Shuffled { seed: 3 };
        let flips: Vec<bool> = (0..64).map(|i| o.generated_first(&format!("e{i}"))).collect();
        assert_eq!(
            flips,
            (0..64).map(|i| o.generated_first(&format!("e{i}"))).collect::<Vec<_>>()
        );
        assert!(flips.iter().any(|b| *b) && flips.iter().any(|b| !*b));
        assert!(!CcOrder::Fixed.generated_first("e0"));
    }

    #[test]
    fn report_envelope_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latency.json");
        let report = measure_latency(&[span("rewrite", 0.5)], &["rewrite"]);
        write_report(&path, "latency", RunLabel::MechanismVerified, &report).unwrap();
        let back: ReportEnvelope<LatencyReport> = read_report(&path, "latency").unwrap();
        assert_eq!(back.body, report);
        assert!(read_report::<LatencyReport>(&path, "eval").is_err());
    }
}
