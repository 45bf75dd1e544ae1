//! Stage orchestration over one output directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json
//! seeds.jsonl
//! pools/<set>.jsonl        one CandidatePool per question
//! scores/<set>.jsonl       one PoolScores per question
//! datasets/<set>.jsonl     training records (+ .summary.json)
//! cc.jsonl                 context-conflicting set, when built here
//! reports/*.json
//! ```
//!
//! `<set>` names a rewrite setting such as `n3-v1`. Pool and score files
//! are append-only and resume at the first question without a record.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use qream_core::backend::{
    sim, Backend, BackendClient, BackendKind, GenParams, MockBackend, MockFixtures, RemoteBackend, ResponseCache,
};
use qream_core::corpus::{self, concat_context, CcExample, CcSkip, CorpusSchema, QaExample};
use qream_core::distill::{self, DistillError, Exclusion, ExportSummary, Selection, SelectionContext};
use qream_core::evalkit::{
    self, CcOrder, CcReport, CcVariant, DocSource, EvalReport, LatencyReport, RewriteSetup, RunLabel, Scorer,
};
use qream_core::judge::{score_candidate, CandidateScore, FilterTarget, Reader, Verifier};
use qream_core::records::{digest_file, read_records, AppendLog, SCHEMA_POOL, SCHEMA_SCORE};
use qream_core::rewriter::{CandidatePool, Rewriter};
use qream_core::seeds::{generate_seeds, ExemplarBank, Generator, TemplateName, TemplateSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{MockResponder, OrderMode, RewriteSet, RunConfig};
use crate::manifest::{RunManifest, StageStatus};
use crate::Failure;

pub const SEEDS: &str = "seeds";
pub const REWRITE: &str = "rewrite";
pub const SCORE: &str = "score";
pub const DISTILL: &str = "distill";
pub const EVAL: &str = "eval";
pub const CC: &str = "cc";
pub const REPORT: &str = "report";
pub const STAGES: [&str; 6] = [SEEDS, REWRITE, SCORE, DISTILL, EVAL, CC];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Seeds,
    Rewrite,
    Score,
    Distill,
    Eval,
    Cc,
    Report,
    All,
}

/// Scores of every candidate of one pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolScores {
    pub example_id: String,
    pub scores: Vec<CandidateScore>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: &'static str,
    /// False when the stage was already complete.
    pub ran: bool,
}

/// Construction options beyond the config file.
#[derive(Default, Clone)]
pub struct Options {
    /// Discard a manifest written under a different config.
    pub force: bool,
    /// Backend id -> transport, replacing what the config would build.
    pub backends: HashMap<String, Arc<dyn Backend>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocQuality {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_s_orient: Option<f64>,
    pub mean_r_inc: f64,
    pub degenerate: usize,
    pub per_example: Vec<DocQualityItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocQualityItem {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_orient: Option<f64>,
    pub r_inc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite_set: Option<String>,
    pub eval: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<DocQuality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcSummary {
    pub examples: usize,
    pub excluded: Vec<CcSkip>,
    pub raw: CcReport,
    pub rewritten: CcReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub seed: u64,
    pub datasets: BTreeMap<String, ExportSummary>,
    pub eval: BTreeMap<String, (f64, f64, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cc: Option<(f64, f64, usize)>,
}

struct StageOutput {
    artifacts: Vec<PathBuf>,
    spans: Vec<(String, f64)>,
}

pub struct Pipeline {
    config: RunConfig,
    dir: PathBuf,
    manifest: RunManifest,
    clients: BTreeMap<String, BackendClient>,
    templates: TemplateSet,
    train: Vec<QaExample>,
    questions: Vec<QaExample>,
    corpus_id: String,
    label: RunLabel,
    /// Output of the last `report` run, for printing.
    pub last_report: Option<String>,
}

fn load_questions(path: &Path, schema: &CorpusSchema) -> Result<Vec<QaExample>, Failure> {
    Ok(corpus::load_corpus(path, schema)?)
}

/// At most `cap` examples, sampled under `seed`, in their original order.
pub fn sample_examples(mut examples: Vec<QaExample>, cap: usize, seed: u64) -> Vec<QaExample> {
    if examples.len() <= cap {
        return examples;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, examples.len(), cap).into_vec();
    keep.sort_unstable();
    let keep: HashSet<usize> = keep.into_iter().collect();
    let mut idx = 0;
    examples.retain(|_| {
        idx += 1;
        keep.contains(&(idx - 1))
    });
    examples
}

fn elapsed(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

impl Pipeline {
    pub fn open(config: RunConfig, options: Options) -> Result<Self, Failure> {
        config.validate()?;
        let schema = CorpusSchema {
            max_passages: Some(config.corpus.max_passages),
            ..CorpusSchema::default()
        };
        let train = load_questions(&config.corpus.train, &schema)?;
        let all_questions = load_questions(&config.corpus.questions, &schema)?;
        let questions = sample_examples(all_questions, config.corpus.sample_cap, config.sample_seed());

        let mut corpus_digests = BTreeMap::new();
        corpus_digests.insert("train".to_string(), digest_file(&config.corpus.train)?);
        corpus_digests.insert("questions".to_string(), digest_file(&config.corpus.questions)?);
        if let Some(cc) = &config.corpus.cc {
            corpus_digests.insert("cc".to_string(), digest_file(cc)?);
        }
        let corpus_id = corpus_digests["questions"][..12].to_string();
        let config_digest = config.digest(&corpus_digests);

        let templates = match &config.templates_dir {
            Some(dir) => TemplateSet::builtin_with_dir(dir)?,
            None => TemplateSet::builtin(),
        };

        let cache = match &config.cache_dir {
            Some(dir) => Some(Arc::new(ResponseCache::open(dir)?)),
            None => None,
        };
        let mut clients = BTreeMap::new();
        let mut all_mock = true;
        for id in config.roles.as_map().into_values() {
            if clients.contains_key(&id) {
                continue;
            }
            let backend = config.backend(&id).expect("validated role binding");
            let transport: Arc<dyn Backend> = match options.backends.get(&id) {
                Some(b) => b.clone(),
                None => match backend.spec.kind {
                    BackendKind::Mock => {
                        let mut mock = MockBackend::new(backend.spec.clone());
                        if let Some(path) = &backend.fixtures {
                            mock = mock.with_fixtures(MockFixtures::load(path)?);
                        }
                        if backend.responder == MockResponder::Simulated {
                            mock = mock
                                .with_responder(sim::responder())
                                .with_score_responder(sim::score_responder());
                        }
                        Arc::new(mock)
                    }
                    BackendKind::Remote => Arc::new(RemoteBackend::new(backend.spec.clone())?),
                },
            };
            all_mock &= transport.spec().kind == BackendKind::Mock;
            let mut client = BackendClient::new(transport)?;
            if let Some(cache) = &cache {
                client = client.with_cache(cache.clone());
            }
            clients.insert(id, client);
        }

        let effective = serde_json::to_value(&config).expect("config serializes");
        let manifest = RunManifest::open(
            &config.output_dir,
            &config_digest,
            config.seed,
            effective,
            options.force,
        )?;
        manifest.save(&config.output_dir)?;
        Ok(Pipeline {
            dir: config.output_dir.clone(),
            config,
            manifest,
            clients,
            templates,
            train,
            questions,
            corpus_id,
            label: if all_mock {
                RunLabel::MechanismVerified
            } else {
                RunLabel::BackendDependent
            },
            last_report: None,
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn questions(&self) -> &[QaExample] {
        &self.questions
    }

    /// Transport attempts issued so far, over all backends.
    pub fn backend_requests(&self) -> u64 {
        self.clients.values().map(BackendClient::requests).sum()
    }

    pub fn seeds_path(&self) -> PathBuf {
        self.dir.join("seeds.jsonl")
    }

    pub fn pool_path(&self, set: &RewriteSet) -> PathBuf {
        self.dir.join("pools").join(format!("{}.jsonl", set.name()))
    }

    pub fn score_path(&self, set: &RewriteSet) -> PathBuf {
        self.dir.join("scores").join(format!("{}.jsonl", set.name()))
    }

    pub fn dataset_path(&self, set: &RewriteSet) -> PathBuf {
        self.dir.join("datasets").join(format!("{}.jsonl", set.name()))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.dir.join("reports").join(format!("{name}.json"))
    }

    fn client(&self, role: &str) -> BackendClient {
        let id = &self.config.roles.as_map()[role];
        self.clients[id].clone()
    }

    fn params(&self, temperature: f64) -> GenParams {
        GenParams {
            temperature,
            max_output_tokens: self.config.hyper.max_output_tokens,
            stop: Vec::new(),
            seed: self.config.seed,
        }
    }

    fn generator(&self) -> Result<Generator, Failure> {
        let t = self
            .templates
            .get(TemplateName::Gen, &self.config.templates.gen)?
            .clone();
        Ok(Generator::new(
            self.client("generator"),
            t,
            self.params(self.config.hyper.gen_temperature),
        )?)
    }

    fn rewriter(&self, version: &str) -> Result<Rewriter, Failure> {
        let t = self.templates.get(TemplateName::Rewrite, version)?.clone();
        Ok(Rewriter::new(
            self.client("rewriter"),
            t,
            self.params(self.config.hyper.rewrite_temperature),
        )?)
    }

    fn reader(&self) -> Result<Reader, Failure> {
        let t = self
            .templates
            .get(TemplateName::Reader, &self.config.templates.reader)?
            .clone();
        Ok(Reader::new(
            self.client("reader"),
            t,
            self.params(self.config.hyper.judge_temperature),
        )?)
    }

    fn verifier(&self) -> Result<Verifier, Failure> {
        let v = &self.config.templates;
        Ok(Verifier::new(
            self.client("verifier"),
            self.templates.get(TemplateName::FactExtract, &v.fact_extract)?.clone(),
            self.templates.get(TemplateName::FactVerify, &v.fact_verify)?.clone(),
            self.params(self.config.hyper.judge_temperature),
        )?)
    }

    fn scorer(&self) -> Result<Scorer, Failure> {
        let t = self
            .templates
            .get(TemplateName::Reconstruct, &self.config.templates.reconstruct)?
            .clone();
        Ok(Scorer::new(self.client("scorer"), t)?)
    }

    fn bank(&self) -> Result<ExemplarBank, Failure> {
        Ok(ExemplarBank::load(&self.seeds_path())?)
    }

    fn ensure_dir(&self, path: &Path) -> Result<(), Failure> {
        let parent = path.parent().unwrap_or(&self.dir);
        std::fs::create_dir_all(parent).map_err(|e| Failure::Data(format!("{}: {e}", parent.display())))
    }

    pub async fn run(&mut self, command: Command) -> Result<Vec<StageOutcome>, Failure> {
        let stages: &[&'static str] = match command {
            Command::Seeds => &[SEEDS],
            Command::Rewrite => &[REWRITE],
            Command::Score => &[SCORE],
            Command::Distill => &[DISTILL],
            Command::Eval => &[EVAL],
            Command::Cc => &[CC],
            Command::Report => &[REPORT],
            Command::All => &[SEEDS, REWRITE, SCORE, DISTILL, EVAL, CC, REPORT],
        };
        let mut outcomes = Vec::new();
        for stage in stages {
            outcomes.push(self.run_stage(stage).await?);
        }
        Ok(outcomes)
    }

    fn dependencies(stage: &str) -> &'static [&'static str] {
        match stage {
            REWRITE => &[SEEDS],
            SCORE => &[REWRITE],
            DISTILL => &[SCORE],
            EVAL => &[REWRITE],
            CC => &[SEEDS],
            REPORT => &[DISTILL, EVAL],
            _ => &[],
        }
    }

    async fn run_stage(&mut self, stage: &'static str) -> Result<StageOutcome, Failure> {
        if stage != REPORT && self.manifest.is_done(stage, &self.dir) {
            tracing::info!(stage, "up to date");
            return Ok(StageOutcome { stage, ran: false });
        }
        for dep in Self::dependencies(stage) {
            self.manifest.require(dep, &self.dir)?;
        }
        let previous = self.manifest.stages.get(stage).map(|r| r.artifacts.clone());
        self.manifest.begin(stage);
        self.manifest.save(&self.dir)?;
        tracing::info!(stage, "running");
        let result = match stage {
            SEEDS => self.seeds().await,
            REWRITE => self.rewrite().await,
            SCORE => self.score().await,
            DISTILL => self.distill(),
            EVAL => self.eval().await,
            CC => self.cc().await,
            REPORT => self.report(),
            _ => unreachable!("unknown stage {stage}"),
        };
        match result {
            Ok(out) => {
                for (item, secs) in out.spans {
                    self.manifest.record_span(stage, &item, secs);
                }
                self.manifest.finish(stage, &self.dir, &out.artifacts)?;
                if previous.as_ref() != Some(&self.manifest.stages[stage].artifacts) {
                    self.invalidate_dependents(stage);
                }
                self.manifest.save(&self.dir)?;
                Ok(StageOutcome { stage, ran: true })
            }
            Err(e) => {
                self.manifest.fail(stage, &e);
                self.manifest.save(&self.dir)?;
                Err(e)
            }
        }
    }

    /// Marks every stage downstream of `stage` pending after its outputs changed.
    fn invalidate_dependents(&mut self, stage: &str) {
        for next in STAGES.iter().chain([&REPORT]) {
            if Self::dependencies(next).contains(&stage) && self.manifest.status(next) == StageStatus::Done {
                tracing::info!(
                    stage = next,
                    upstream = stage,
                    "upstream outputs changed; stage will rerun"
                );
                self.manifest.stages.get_mut(*next).expect("present").status = StageStatus::Pending;
                self.invalidate_dependents(next);
            }
        }
    }

    async fn seeds(&self) -> Result<StageOutput, Failure> {
        let start = Instant::now();
        let bank = generate_seeds(&self.train, self.config.hyper.m, &self.generator()?, self.config.seed).await?;
        let path = self.seeds_path();
        bank.save(&path)?;
        Ok(StageOutput {
            artifacts: vec![path],
            spans: vec![("bank".into(), elapsed(start))],
        })
    }

    async fn rewrite(&self) -> Result<StageOutput, Failure> {
        let bank = self.bank()?;
        let (l, sep) = (self.config.hyper.l, self.config.hyper.separator.as_str());
        let mut out = StageOutput {
            artifacts: Vec::new(),
            spans: Vec::new(),
        };
        for set in self.config.rewrite_sets() {
            let rewriter = self.rewriter(&set.version)?;
            let config_digest = rewriter.config_digest(&bank, set.n, l);
            let path = self.pool_path(&set);
            self.ensure_dir(&path)?;
            let (mut log, done) = AppendLog::open::<CandidatePool>(&path, SCHEMA_POOL)?;
            if let Some(stale) = done.iter().find(|p| p.config_digest != config_digest) {
                return Err(Failure::Data(format!(
                    "{}: pool `{}` was produced under another rewrite config",
                    path.display(),
                    stale.example_id
                )));
            }
            let done: HashSet<String> = done.into_iter().map(|p| p.example_id).collect();
            let todo: Vec<&QaExample> = self.questions.iter().filter(|q| !done.contains(&q.id)).collect();
            if !done.is_empty() {
                tracing::info!(
                    set = set.name(),
                    resumed_after = done.len(),
                    remaining = todo.len(),
                    "resuming"
                );
            }
            let (rewriter, bank, set_ref, config_digest) = (&rewriter, &bank, &set, &config_digest);
            let mut results = stream::iter(todo)
                .map(|ex| async move {
                    let start = Instant::now();
                    let pool = if bank.contains_question(&ex.question) {
                        CandidatePool::skipped(&ex.id, config_digest, "question is an exemplar seed")
                    } else {
                        let raw = concat_context(ex, sep);
                        rewriter
                            .iterative_rewrite(&ex.question, &raw, bank, set_ref.n, l)
                            .await?
                    };
                    Ok::<_, Failure>((pool, elapsed(start)))
                })
                .buffered(self.config.workers);
            while let Some(result) = results.next().await {
                let (pool, secs) = result?;
                if let Some(reason) = &pool.shortfall {
                    tracing::warn!(id = pool.example_id, reason, "short pool");
                }
                log.append(&pool)?;
                out.spans.push((format!("{}/{}", set.name(), pool.example_id), secs));
            }
            out.artifacts.push(path);
        }
        Ok(out)
    }

    async fn score(&self) -> Result<StageOutput, Failure> {
        let reader = self.reader()?;
        let verifier = self.verifier()?;
        let filter = self.config.hyper.filter_target;
        let sep = self.config.hyper.separator.as_str();
        let by_id: HashMap<&str, &QaExample> = self.questions.iter().map(|q| (q.id.as_str(), q)).collect();
        let mut out = StageOutput {
            artifacts: Vec::new(),
            spans: Vec::new(),
        };
        for set in self.config.rewrite_sets() {
            let pools: Vec<CandidatePool> = read_records(&self.pool_path(&set), SCHEMA_POOL)?;
            let path = self.score_path(&set);
            self.ensure_dir(&path)?;
            let (mut log, done) = AppendLog::open::<PoolScores>(&path, SCHEMA_SCORE)?;
            let done: HashSet<String> = done.into_iter().map(|s| s.example_id).collect();
            let mut todo = Vec::new();
            for pool in pools.iter().filter(|p| !done.contains(&p.example_id)) {
                let ex = by_id.get(pool.example_id.as_str()).ok_or_else(|| {
                    Failure::Data(format!("pool `{}` has no question in the corpus", pool.example_id))
                })?;
                todo.push((pool, *ex));
            }
            let (reader, verifier) = (&reader, &verifier);
            let mut results = stream::iter(todo)
                .map(|(pool, ex)| async move {
                    let start = Instant::now();
                    let raw = concat_context(ex, sep);
                    let scores =
                        futures::future::join_all(pool.candidates.iter().map(|c| {
                            score_candidate(c, &ex.question, &ex.gold_answers, &raw, reader, verifier, filter)
                        }))
                        .await;
                    (
                        PoolScores {
                            example_id: pool.example_id.clone(),
                            scores,
                        },
                        elapsed(start),
                    )
                })
                .buffered(self.config.workers);
            while let Some((scored, secs)) = results.next().await {
                for s in scored.scores.iter().filter(|s| !s.is_scored()) {
                    tracing::warn!(
                        id = s.example_id,
                        iteration = s.iteration,
                        reason = s.unscored.as_deref(),
                        "unscored"
                    );
                }
                log.append(&scored)?;
                out.spans.push((format!("{}/{}", set.name(), scored.example_id), secs));
            }
            out.artifacts.push(path);
        }
        Ok(out)
    }

    fn distill(&self) -> Result<StageOutput, Failure> {
        let bank = self.bank()?;
        let ft = self.templates.get(TemplateName::Ft, &self.config.templates.ft)?;
        let roles = self.config.roles.as_map();
        let sep = self.config.hyper.separator.as_str();
        let by_id: HashMap<&str, &QaExample> = self.questions.iter().map(|q| (q.id.as_str(), q)).collect();
        let mut out = StageOutput {
            artifacts: Vec::new(),
            spans: Vec::new(),
        };
        for set in self.config.rewrite_sets() {
            let start = Instant::now();
            let pools: Vec<CandidatePool> = read_records(&self.pool_path(&set), SCHEMA_POOL)?;
            let scores: Vec<PoolScores> = read_records(&self.score_path(&set), SCHEMA_SCORE)?;
            let scores: HashMap<&str, &[CandidateScore]> = scores
                .iter()
                .map(|s| (s.example_id.as_str(), s.scores.as_slice()))
                .collect();
            let mut records = Vec::new();
            let mut exclusions = Vec::new();
            for pool in &pools {
                let ex = by_id.get(pool.example_id.as_str()).ok_or_else(|| {
                    Failure::Data(format!("pool `{}` has no question in the corpus", pool.example_id))
                })?;
                let pool_scores = scores
                    .get(pool.example_id.as_str())
                    .ok_or_else(|| Failure::Dependency {
                        stage: SCORE.into(),
                        status: format!("no scores for `{}`", pool.example_id),
                    })?;
                let raw = concat_context(ex, sep);
                let ctx = SelectionContext {
                    question: &ex.question,
                    r_raw: &raw.text,
                    bank_id: &bank.bank_id,
                    backends: &roles,
                    training_filter: FilterTarget::Rewrite,
                };
                match distill::select_golden(pool, pool_scores, &ctx) {
                    Ok(Selection::Selected(record)) => records.push(record),
                    Ok(Selection::Excluded(exclusion)) => exclusions.push(exclusion),
                    Err(DistillError::Unscored {
                        example_id,
                        iteration,
                        reason,
                    }) => exclusions.push(Exclusion {
                        example_id,
                        reason: format!("candidate {iteration} unscored: {reason}"),
                    }),
                    Err(e) => return Err(e.into()),
                }
            }
            let path = self.dataset_path(&set);
            self.ensure_dir(&path)?;
            let summary = distill::export_dataset(&records, &exclusions, ft, &path)?;
            tracing::info!(
                set = set.name(),
                exported = summary.exported,
                excluded = summary.excluded,
                "dataset written"
            );
            out.artifacts.push(path.clone());
            out.artifacts.push(distill::summary_path(&path));
            out.spans.push((set.name(), elapsed(start)));
        }
        Ok(out)
    }

    /// Generated background documents for every question lacking one.
    async fn generated_docs(&self) -> Result<HashMap<String, String>, Failure> {
        let generator = self.generator()?;
        let generator = &generator;
        let docs: Vec<(String, String)> = stream::iter(self.questions.iter().filter(|q| q.generated_doc.is_none()))
            .map(|ex| async move {
                let c = generator.background(&ex.question).await?;
                Ok::<_, Failure>((ex.id.clone(), c.text.trim().to_string()))
            })
            .buffered(self.config.workers)
            .collect::<Vec<_>>()
            .await
            .into_iter()
            .collect::<Result<_, _>>()?;
        Ok(docs.into_iter().collect())
    }

    async fn doc_quality(&self, docs: &[(String, String)]) -> Result<DocQuality, Failure> {
        let verifier = self.verifier()?;
        let scorer = self.scorer()?;
        let can_score = scorer.client.spec().capabilities.score_logprobs;
        if !can_score {
            tracing::warn!(
                backend = scorer.client.id(),
                "scorer lacks score_logprobs; s_orient skipped"
            );
        }
        let by_id: HashMap<&str, &QaExample> = self.questions.iter().map(|q| (q.id.as_str(), q)).collect();
        let sep = self.config.hyper.separator.as_str();
        let (verifier, scorer) = (&verifier, &scorer);
        let items: Vec<(DocQualityItem, bool)> = stream::iter(docs)
            .map(|(id, doc)| {
                let ex = by_id[id.as_str()];
                async move {
                    let raw = concat_context(ex, sep);
                    let fact = evalkit::inconsistency_rate(doc, &raw.text, verifier).await?;
                    let s_orient = if can_score {
                        Some(evalkit::style_score(doc, &ex.question, scorer).await?.s_orient)
                    } else {
                        None
                    };
                    Ok::<_, Failure>((
                        DocQualityItem {
                            id: id.clone(),
                            s_orient,
                            r_inc: fact.r_inc,
                        },
                        fact.degenerate,
                    ))
                }
            })
            .buffered(self.config.workers)
            .collect::<Vec<_>>()
            .await
            .into_iter()
            .collect::<Result<_, _>>()?;
        let n = items.len();
        let mean = |v: Vec<f64>| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Ok(DocQuality {
            n,
            mean_s_orient: can_score.then(|| mean(items.iter().filter_map(|(i, _)| i.s_orient).collect())),
            mean_r_inc: mean(items.iter().map(|(i, _)| i.r_inc).collect()),
            degenerate: items.iter().filter(|(_, d)| *d).count(),
            per_example: items.into_iter().map(|(i, _)| i).collect(),
        })
    }

    async fn eval_source(
        &self,
        source: DocSource,
        extra: &HashMap<String, String>,
        reader: &Reader,
        rewrite_set: Option<String>,
    ) -> Result<EvalSummary, Failure> {
        let sep = self.config.hyper.separator.as_str();
        let eval = evalkit::eval_reader(
            &self.corpus_id,
            &self.questions,
            source,
            extra,
            sep,
            reader,
            self.config.workers,
        )
        .await?;
        let quality = if self.config.eval.doc_quality {
            let skipped: HashSet<&str> = eval.skipped.iter().map(|s| s.id.as_str()).collect();
            let docs: Vec<(String, String)> = self
                .questions
                .iter()
                .filter(|q| !skipped.contains(q.id.as_str()))
                .filter_map(|q| {
                    evalkit::document_for(q, source, extra, sep)
                        .ok()
                        .map(|d| (q.id.clone(), d))
                })
                .filter(|(_, d)| !d.trim().is_empty())
                .collect();
            Some(self.doc_quality(&docs).await?)
        } else {
            None
        };
        Ok(EvalSummary {
            rewrite_set,
            eval,
            quality,
        })
    }

    async fn eval(&self) -> Result<StageOutput, Failure> {
        let reader = self.reader()?;
        let mut out = StageOutput {
            artifacts: Vec::new(),
            spans: Vec::new(),
        };
        let needs_generated = self
            .config
            .eval
            .doc_sources
            .iter()
            .any(|s| matches!(s, DocSource::Generated | DocSource::RetrievedGenerated));
        let generated = if needs_generated {
            self.generated_docs().await?
        } else {
            HashMap::new()
        };
        for &source in &self.config.eval.doc_sources {
            let runs: Vec<(String, Option<String>, HashMap<String, String>)> = match source {
                DocSource::Rewritten => self
                    .config
                    .rewrite_sets()
                    .into_iter()
                    .map(|set| {
                        let pools: Vec<CandidatePool> = read_records(&self.pool_path(&set), SCHEMA_POOL)?;
                        let docs = pools
                            .into_iter()
                            .filter_map(|p| p.last().map(|c| (p.example_id.clone(), c.text.clone())))
                            .collect();
                        Ok((format!("eval-rewritten-{}", set.name()), Some(set.name()), docs))
                    })
                    .collect::<Result<_, Failure>>()?,
                DocSource::Custom => {
                    tracing::warn!("doc source `custom` has no documents in a pipeline run; skipped");
                    continue;
                }
                DocSource::Generated | DocSource::RetrievedGenerated => {
                    vec![(format!("eval-{}", source_name(source)), None, generated.clone())]
                }
                DocSource::Retrieved => vec![(format!("eval-{}", source_name(source)), None, HashMap::new())],
            };
            for (name, set, extra) in runs {
                let start = Instant::now();
                let summary = self.eval_source(source, &extra, &reader, set).await?;
                let path = self.report_path(&name);
                self.ensure_dir(&path)?;
                evalkit::write_report(&path, "eval", self.label, &summary)?;
                out.artifacts.push(path);
                out.spans.push((name, elapsed(start)));
            }
        }
        Ok(out)
    }

    async fn cc(&self) -> Result<StageOutput, Failure> {
        let start = Instant::now();
        let reader = self.reader()?;
        let bank = self.bank()?;
        let mut artifacts = Vec::new();
        let (set, mut excluded) = match &self.config.corpus.cc {
            Some(path) => (corpus::load_cc(path)?, Vec::new()),
            None => {
                let built =
                    corpus::build_cc_set(&self.questions, &self.generator()?, &reader, self.config.workers).await?;
                let path = self.dir.join("cc.jsonl");
                corpus::write_cc(&path, &built.examples)?;
                artifacts.push(path);
                (built.examples, built.skipped)
            }
        };
        let mut usable: Vec<CcExample> = Vec::new();
        for cc in set {
            if bank.contains_question(&cc.question) {
                excluded.push(CcSkip {
                    id: cc.base.clone(),
                    reason: "question is an exemplar seed".into(),
                });
            } else {
                usable.push(cc);
            }
        }
        let order = match self.config.eval.cc_order {
            OrderMode::Fixed => CcOrder::Fixed,
            OrderMode::Shuffled => CcOrder::Shuffled { seed: self.config.seed },
        };
        let rewriter = self.rewriter(&self.config.templates.rewrite)?;
        let setup = RewriteSetup {
            rewriter: &rewriter,
            bank: &bank,
            rounds: self.config.hyper.n,
            limit: self.config.hyper.l,
        };
        let sep = self.config.eval.cc_separator.as_str();
        let workers = self.config.workers;
        let raw = evalkit::eval_cc(&usable, CcVariant::Raw, &reader, None, order, sep, workers).await?;
        let rewritten = evalkit::eval_cc(
            &usable,
            CcVariant::Rewritten,
            &reader,
            Some(&setup),
            order,
            sep,
            workers,
        )
        .await?;
        let summary = CcSummary {
            examples: usable.len(),
            excluded,
            raw,
            rewritten,
        };
        let path = self.report_path("cc");
        self.ensure_dir(&path)?;
        evalkit::write_report(&path, "cc", self.label, &summary)?;
        artifacts.push(path);
        Ok(StageOutput {
            artifacts,
            spans: vec![("cc".into(), elapsed(start))],
        })
    }

    fn report(&mut self) -> Result<StageOutput, Failure> {
        let latency = evalkit::measure_latency(&self.manifest.spans, &STAGES);
        latency.validate()?;
        let latency_path = self.report_path("latency");
        self.ensure_dir(&latency_path)?;
        evalkit::write_report(&latency_path, "latency", self.label, &latency)?;

        let mut summary = RunSummary {
            config_digest: self.manifest.config_digest.clone(),
            seed: self.config.seed,
            datasets: BTreeMap::new(),
            eval: BTreeMap::new(),
            cc: None,
        };
        for set in self.config.rewrite_sets() {
            let path = distill::summary_path(&self.dataset_path(&set));
            let bytes = std::fs::read(&path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            let s: ExportSummary =
                serde_json::from_slice(&bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            summary.datasets.insert(set.name(), s);
        }
        let reports = self.dir.join("reports");
        let mut names: Vec<String> = std::fs::read_dir(&reports)
            .map_err(|e| Failure::Data(format!("{}: {e}", reports.display())))?
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter(|n| n.starts_with("eval-") && n.ends_with(".json"))
            .collect();
        names.sort();
        for name in names {
            let env = evalkit::read_report::<EvalSummary>(&reports.join(&name), "eval")?;
            let e = env.body.eval;
            summary
                .eval
                .insert(name.trim_end_matches(".json").to_string(), (e.acc, e.f1, e.n));
        }
        let cc_path = self.report_path("cc");
        if cc_path.exists() {
            let cc = evalkit::read_report::<CcSummary>(&cc_path, "cc")?.body;
            summary.cc = Some((cc.raw.accuracy, cc.rewritten.accuracy, cc.examples));
        }
        let summary_path = self.report_path("summary");
        evalkit::write_report(&summary_path, "summary", self.label, &summary)?;
        self.last_report = Some(render_table(&summary, &latency, self.label));
        Ok(StageOutput {
            artifacts: vec![summary_path],
            spans: Vec::new(),
        })
    }
}

fn source_name(source: DocSource) -> String {
    serde_json::to_value(source)
        .ok()
        .and_then(|v| v.as_str().map(|s| s.replace('+', "-")))
        .unwrap_or_default()
}

fn render_table(summary: &RunSummary, latency: &LatencyReport, label: RunLabel) -> String {
    let mut out = String::new();
    let label = serde_json::to_value(label)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    out.push_str(&format!("results ({label})\n"));
    out.push_str("dataset                 exported  excluded  mean S_total\n");
    for (name, d) in &summary.datasets {
        let mean = d
            .s_total
            .as_ref()
            .map(|s| format!("{:.3}", s.mean))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!("{name:<24}{:>8}  {:>8}  {mean:>12}\n", d.exported, d.excluded));
    }
    out.push_str("evaluation                         acc      f1       n\n");
    for (name, (acc, f1, n)) in &summary.eval {
        out.push_str(&format!("{name:<32}{acc:>7.3}  {f1:>6.3}  {n:>6}\n"));
    }
    if let Some((raw, rewritten, n)) = summary.cc {
        out.push_str(&format!(
            "context-conflicting (n={n}): raw {raw:.3}  rewritten {rewritten:.3}\n"
        ));
    }
    out.push_str("stage       n     mean_s    p50_s    p95_s\n");
    for (stage, s) in &latency.stages {
        out.push_str(&format!(
            "{stage:<10}{:>4}  {:>8.4} {:>8.4} {:>8.4}\n",
            s.n, s.mean_secs, s.p50_secs, s.p95_secs
        ));
    }
    out
}
