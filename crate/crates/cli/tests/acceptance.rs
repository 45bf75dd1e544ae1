//! Acceptance gate: one PASS/FAIL line per criterion. Criterion 11 needs a
//! real backend and is informational only.
//!
//! Run with `cargo test -p qream-cli --test acceptance`.

mod common;

use std::collections::HashMap;
use std::future::Future;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use qream_cli::{Command, PoolScores};
use qream_core::backend::{
    sim, BackendClient, BackendKind, BackendSpec, Capabilities, GenParams, MockBackend, MockFixtures, Prompt,
    RemoteBackend,
};
use qream_core::corpus::{concat_context, load_corpus, CcExample, CorpusSchema, QaExample, Split};
use qream_core::distill::{load_dataset, summary_path, ExportSummary};
use qream_core::evalkit::{self, CcOrder, CcVariant, LatencyReport, RewriteSetup, Scorer};
use qream_core::judge::{composite_score, normalize_answer, support_ratio, token_f1, AtomicFact, Reader, Verifier};
use qream_core::records::{read_records, SCHEMA_POOL, SCHEMA_SCORE};
use qream_core::rewriter::{CandidatePool, Rewriter};
use qream_core::seeds::{generate_seeds, ExemplarBank, Generator, TemplateName, TemplateSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if let false = $cond {
            return Err(format!($($msg)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Independent reference for answer normalization, one function per rule.

const REF_PUNCT: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~\u{2018}\u{2019}\u{201C}\u{201D}\u{2013}\u{2014}\u{2026}\u{00AB}\u{00BB}\u{00BF}\u{00A1}";

fn ref_lower(s: &str) -> String {
    s.to_lowercase()
}

fn ref_remove_punc(s: &str) -> String {
    s.chars().filter(|c| !REF_PUNCT.contains(*c)).collect()
}

fn ref_remove_articles(s: &str) -> String {
    let mut out = Vec::new();
    for w in s.split_whitespace() {
        if w != "a" && w != "an" && w != "the" {
            out.push(w);
        }
    }
    out.join(" ")
}

fn ref_white_space_fix(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn ref_normalize(s: &str) -> String {
    ref_white_space_fix(&ref_remove_articles(&ref_remove_punc(&ref_lower(s))))
}

/// Token F1 by brute-force multiset matching: each prediction token claims
/// the first unclaimed equal gold token.
fn ref_f1(pred: &str, golds: &[String]) -> f64 {
    let p = ref_normalize(pred);
    let p: Vec<&str> = p.split_whitespace().collect();
    let mut best = 0.0f64;
    for g in golds {
        let g = ref_normalize(g);
        let g: Vec<&str> = g.split_whitespace().collect();
        if p.is_empty() || g.is_empty() {
            continue;
        }
        let mut claimed = vec![false; g.len()];
        let mut overlap = 0usize;
        for t in &p {
            for (j, u) in g.iter().enumerate() {
                if !claimed[j] && t == u {
                    claimed[j] = true;
                    overlap += 1;
                    break;
                }
            }
        }
        if overlap == 0 {
            continue;
        }
        let precision = overlap as f64 / p.len() as f64;
        let recall = overlap as f64 / g.len() as f64;
        let f1 = 2.0 * precision * recall / (precision + recall);
        if f1 > best {
            best = f1;
        }
    }
    best
}

fn ref_contains(text: &str, golds: &[String]) -> bool {
    let hay = ref_normalize(text);
    golds.iter().any(|g| {
        let g = ref_normalize(g);
        !g.is_empty() && hay.contains(&g)
    })
}

const NORMALIZE_TABLE: [(&str, &str); 50] = [
    ("", ""),
    ("   ", ""),
    ("Paris", "paris"),
    ("PARIS", "paris"),
    ("The Beatles", "beatles"),
    ("the the the", ""),
    ("a", ""),
    ("An apple", "apple"),
    ("Theatre", "theatre"),
    ("another answer", "another answer"),
    ("anthem", "anthem"),
    ("A.", ""),
    ("U.S.A.", "usa"),
    ("New-York", "newyork"),
    ("rock 'n' roll", "rock n roll"),
    ("  spaced   out  ", "spaced out"),
    ("tab\tseparated\nlines", "tab separated lines"),
    ("!!!", ""),
    ("...", ""),
    ("\u{2026}", ""),
    ("\u{201C}Quoted\u{201D}", "quoted"),
    ("\u{2018}single\u{2019}", "single"),
    ("em\u{2014}dash", "emdash"),
    ("en\u{2013}dash", "endash"),
    ("\u{00AB}guillemets\u{00BB}", "guillemets"),
    ("\u{00BF}Qu\u{00E9}?", "qu\u{00E9}"),
    ("\u{00A1}Hola!", "hola"),
    ("Beyonc\u{00E9}", "beyonc\u{00E9}"),
    ("\u{00C9}COLE", "\u{00E9}cole"),
    ("1,990", "1990"),
    ("3.14", "314"),
    ("$100", "100"),
    ("50%", "50"),
    ("C++", "c"),
    ("O'Neill", "oneill"),
    ("the a an", ""),
    ("The Who", "who"),
    ("a.k.a. the Boss", "aka boss"),
    ("(the) answer", "answer"),
    ("[an] option", "option"),
    ("The.Matrix", "thematrix"),
    ("the-end", "theend"),
    ("At the end", "at end"),
    ("AN", ""),
    ("anA", "ana"),
    ("Spike the dog", "spike dog"),
    ("Tom & Jerry", "tom jerry"),
    ("e-mail@host.com", "emailhostcom"),
    ("#1 hit", "1 hit"),
    ("under_score", "underscore"),
];

const VOCAB: &[&str] = &[
    "Paris",
    "paris",
    "the",
    "The",
    "a",
    "an",
    "An",
    "New",
    "York",
    "new-york",
    "U.S.",
    "us",
    "Beyonc\u{00E9}",
    "1990",
    "1,990",
    "!!!",
    "...",
    "\u{201C}quoted\u{201D}",
    "quoted",
    "\u{2014}",
    "Spike",
    "spike",
    "dog",
    "Tom",
    "Jerry",
    "&",
    "Ada",
    "Holm",
    "holm",
    "of",
];

fn random_phrase(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(0..=max);
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push_str([" ", "  ", "\t", ", ", " - "][rng.random_range(0..5)]);
        }
        out.push_str(VOCAB[rng.random_range(0..VOCAB.len())]);
    }
    out
}

fn c1_metric_oracle() -> Check {
    let start = Instant::now();
    for (i, (input, expected)) in NORMALIZE_TABLE.iter().enumerate() {
        ensure!(
            ref_normalize(input) == *expected,
            "reference disagrees with table row {i} ({input:?})"
        );
        let got = normalize_answer(input);
        ensure!(
            got == *expected,
            "normalize_answer({input:?}) = {got:?}, expected {expected:?}"
        );
    }
    let mut cases: Vec<(String, Vec<String>)> = vec![
        (String::new(), vec![String::new()]),
        (String::new(), vec!["Paris".into()]),
        ("Paris".into(), vec![String::new()]),
        ("the".into(), vec!["a".into()]),
        ("!!!".into(), vec!["...".into()]),
        ("The Paris".into(), vec!["paris!".into()]),
        ("paris paris".into(), vec!["Paris".into()]),
        ("Paris".into(), vec!["paris paris".into()]),
        ("Tom and Jerry".into(), vec!["Jerry".into(), "Tom & Jerry".into()]),
        ("an apple a day".into(), vec!["apple day".into()]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    while cases.len() < 200 {
        let pred = random_phrase(&mut rng, 6);
        let golds = (0..rng.random_range(1..=3))
            .map(|_| random_phrase(&mut rng, 4))
            .collect();
        cases.push((pred, golds));
    }
    let mut nonzero = 0;
    for (pred, golds) in &cases {
        let got = token_f1(pred, golds);
        let want = ref_f1(pred, golds);
        ensure!(
            got.to_bits() == want.to_bits(),
            "token_f1({pred:?}, {golds:?}) = {got}, oracle {want}"
        );
        nonzero += usize::from(want > 0.0);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 1.0, "took {secs:.3}s");
    Ok(format!(
        "50 normalize rows, 200 F1 pairs ({nonzero} nonzero), {:.1} ms",
        secs * 1e3
    ))
}

fn c2_composite_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pairs: Vec<(f64, f64)> = vec![(0.0, 0.0), (1.0, 1.0), (0.0, 1.0), (1.0, 0.0)];
    while pairs.len() < 1000 {
        pairs.push((rng.random::<f64>(), rng.random::<f64>()));
    }
    for (a, b) in pairs {
        let s = composite_score(a, b);
        ensure!((s - (a + b) / 2.0).abs() <= 1e-12, "S_total({a}, {b}) = {s}");
        ensure!((0.0..=1.0).contains(&s), "S_total({a}, {b}) = {s} out of [0, 1]");
        ensure!(
            a.min(b) <= s && s <= a.max(b),
            "S_total({a}, {b}) = {s} outside its inputs"
        );
    }
    Ok("1000 pairs".into())
}

// ---------------------------------------------------------------------------
// Shared full pipeline run for criteria 3, 4 and 7.

struct FullRun {
    fixture: common::Fixture,
    cache: tempfile::TempDir,
}

fn overrides(cache: &Path, out: &Path) -> Vec<String> {
    vec![
        format!("cache_dir = {:?}", cache.to_string_lossy()),
        format!("output_dir = {:?}", out.to_string_lossy()),
    ]
}

async fn full_run(questions: usize) -> Result<FullRun, String> {
    let fixture = common::fixture(questions);
    let cache = tempfile::tempdir().map_err(err)?;
    let out = fixture.path().join("run");
    let o = overrides(cache.path(), &out);
    let refs: Vec<&str> = o.iter().map(String::as_str).collect();
    let mut p = qream_cli::Pipeline::open(fixture.config(&refs), Default::default()).map_err(err)?;
    p.run(Command::All).await.map_err(err)?;
    Ok(FullRun { fixture, cache })
}

fn golds_by_id(run: &FullRun) -> Result<HashMap<String, Vec<String>>, String> {
    let questions = load_corpus(&run.fixture.path().join("questions.jsonl"), &CorpusSchema::default()).map_err(err)?;
    Ok(questions.into_iter().map(|q| (q.id, q.gold_answers)).collect())
}

fn scores_by_id(run: &FullRun) -> Result<HashMap<String, PoolScores>, String> {
    let scores: Vec<PoolScores> =
        read_records(&run.fixture.path().join("run/scores/n3-v1.jsonl"), SCHEMA_SCORE).map_err(err)?;
    Ok(scores.into_iter().map(|s| (s.example_id.clone(), s)).collect())
}

fn c3_hard_filter(run: &FullRun) -> Check {
    let golds = golds_by_id(run)?;
    let scores = scores_by_id(run)?;
    let dataset = run.fixture.path().join("run/datasets/n3-v1.jsonl");
    let records = load_dataset(&dataset).map_err(err)?;
    let summary: ExportSummary =
        serde_json::from_slice(&std::fs::read(summary_path(&dataset)).map_err(err)?).map_err(err)?;
    ensure!(golds.len() >= 100, "only {} questions", golds.len());
    ensure!(!records.is_empty(), "nothing exported");
    ensure!(!summary.exclusions.is_empty(), "no exclusions to check");
    ensure!(
        records.len() + summary.exclusions.len() == golds.len(),
        "{} exported + {} excluded != {} questions",
        records.len(),
        summary.exclusions.len(),
        golds.len()
    );
    for r in &records {
        let id = &r.meta.example_id;
        let gold = &golds[id];
        ensure!(ref_contains(&r.target, gold), "`{id}`: target lacks gold {gold:?}");
        let s = scores[id]
            .scores
            .iter()
            .find(|s| s.iteration == r.meta.iteration)
            .ok_or_else(|| format!("`{id}`: no score for iteration {}", r.meta.iteration))?;
        let answer = s
            .reader_answer
            .as_ref()
            .ok_or_else(|| format!("`{id}`: no reader answer"))?;
        ensure!(
            ref_contains(&answer.text, gold),
            "`{id}`: reader answer {:?} lacks gold",
            answer.text
        );
    }
    let pools: Vec<CandidatePool> =
        read_records(&run.fixture.path().join("run/pools/n3-v1.jsonl"), SCHEMA_POOL).map_err(err)?;
    let pools: HashMap<&str, &CandidatePool> = pools.iter().map(|p| (p.example_id.as_str(), p)).collect();
    for ex in &summary.exclusions {
        let gold = &golds[&ex.example_id];
        let pool = pools
            .get(ex.example_id.as_str())
            .ok_or_else(|| format!("no pool for `{}`", ex.example_id))?;
        for cand in &pool.candidates {
            let s = scores
                .get(&ex.example_id)
                .and_then(|p| p.scores.iter().find(|s| s.iteration == cand.iteration))
                .ok_or_else(|| format!("`{}` iteration {} unscored", ex.example_id, cand.iteration))?;
            let answer = s.reader_answer.as_ref().map(|a| a.text.as_str()).unwrap_or("");
            let survives = ref_contains(answer, gold) && ref_contains(&cand.text, gold);
            ensure!(
                !survives,
                "excluded `{}` has a survivor at iteration {}",
                ex.example_id,
                cand.iteration
            );
        }
    }
    Ok(format!(
        "{} questions: {} exported, {} excluded",
        golds.len(),
        records.len(),
        summary.exclusions.len()
    ))
}

fn c4_selection_optimality(run: &FullRun) -> Check {
    let scores = scores_by_id(run)?;
    let records = load_dataset(&run.fixture.path().join("run/datasets/n3-v1.jsonl")).map_err(err)?;
    let mut ties = 0;
    for r in &records {
        let id = &r.meta.example_id;
        let chosen = r.meta.s_total;
        ensure!(
            chosen == (r.meta.s_perf + r.meta.s_fact) / 2.0,
            "`{id}`: recorded s_total is not the mean of its parts"
        );
        for s in &scores[id].scores {
            if !(s.passes_hard_filter && s.rewrite_contains_gold) {
                continue;
            }
            let Some(total) = s.s_total else { continue };
            ensure!(
                total <= chosen,
                "`{id}`: iteration {} beats the export ({total} > {chosen})",
                s.iteration
            );
            if total == chosen && s.iteration != r.meta.iteration {
                ensure!(
                    s.iteration > r.meta.iteration,
                    "`{id}`: tie not resolved to the earliest iteration"
                );
                ties += 1;
            }
        }
    }
    Ok(format!("{} records rescanned, {ties} ties", records.len()))
}

async fn c7_determinism(first: &FullRun) -> Check {
    let second = full_run(FULL_RUN_QUESTIONS).await?;
    let skip = ["manifest.json", "latency.json"];
    let a = common::snapshot(&first.fixture.path().join("run"), &skip);
    let b = common::snapshot(&second.fixture.path().join("run"), &skip);
    for dir in ["pools/", "scores/", "datasets/", "reports/"] {
        ensure!(
            a.keys().any(|k| k.starts_with(dir)),
            "first run wrote nothing under {dir}"
        );
    }
    ensure!(
        a.keys().eq(b.keys()),
        "file sets differ: {:?} vs {:?}",
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &a {
        ensure!(&b[name] == bytes, "{name} differs between runs");
    }

    let backend = common::instrumented();
    let third_out = tempfile::tempdir().map_err(err)?;
    let o = overrides(first.cache.path(), third_out.path());
    let refs: Vec<&str> = o.iter().map(String::as_str).collect();
    let mut third = first.fixture.open_with(&refs, backend.clone());
    third.run(Command::All).await.map_err(err)?;
    ensure!(
        backend.calls() == 0,
        "warm-cache run reached the backend {} times",
        backend.calls()
    );
    ensure!(
        third.backend_requests() == 0,
        "warm-cache run issued {} requests",
        third.backend_requests()
    );
    let c = common::snapshot(third_out.path(), &skip);
    ensure!(c == a, "warm-cache run produced different files");
    Ok(format!("{} files identical; warm cache: 0 backend calls", a.len()))
}

// ---------------------------------------------------------------------------

fn builtin(name: TemplateName) -> qream_core::seeds::PromptTemplate {
    TemplateSet::builtin()
        .get(name, "v1")
        .expect("builtin template")
        .clone()
}

fn client(backend: Arc<MockBackend>) -> BackendClient {
    BackendClient::new(backend).expect("client")
}

fn sim_verifier(backend: Arc<MockBackend>) -> Verifier {
    Verifier::new(
        client(backend),
        builtin(TemplateName::FactExtract),
        builtin(TemplateName::FactVerify),
        GenParams::default(),
    )
    .expect("verifier")
}

fn passage_section(prompt: &str) -> Option<&str> {
    let start = prompt.rfind("[Passage]\n")? + "[Passage]\n".len();
    let end = prompt[start..].find("\n\n[Rewritten Background]")? + start;
    Some(&prompt[start..end])
}

async fn c5_iteration_mechanics() -> Check {
    let backend = Arc::new(sim::simulated_backend(BackendSpec::mock("sim")).recording());
    let mut all = sim::synthetic_corpus(40, 5, Split::Train);
    let questions = all.split_off(10);
    let generator = Generator::new(
        client(backend.clone()),
        builtin(TemplateName::Gen),
        GenParams::default(),
    )
    .map_err(err)?;
    let bank = generate_seeds(&all, 3, &generator, 5).await.map_err(err)?;
    let rewriter = Rewriter::new(
        client(backend.clone()),
        builtin(TemplateName::Rewrite),
        GenParams::default(),
    )
    .map_err(err)?;
    let mut pools = Vec::new();
    for ex in &questions {
        let raw = concat_context(ex, "\n");
        pools.push((
            raw.clone(),
            rewriter
                .iterative_rewrite(&ex.question, &raw, &bank, 3, 100)
                .await
                .map_err(err)?,
        ));
    }
    let prompts: HashMap<String, String> = backend
        .recorded_prompts()
        .into_iter()
        .map(|p| (p.digest(), p.user_text().to_string()))
        .collect();
    let mut truncated = 0;
    for (raw, pool) in &pools {
        ensure!(
            pool.candidates.len() == 3,
            "`{}` has {} candidates",
            pool.example_id,
            pool.candidates.len()
        );
        for pair in pool.candidates.windows(2) {
            let (prev, cand) = (&pair[0], &pair[1]);
            let prompt = prompts
                .get(&cand.input_digest)
                .ok_or_else(|| format!("`{}` round {}: prompt not recorded", pool.example_id, cand.iteration))?;
            let section = passage_section(prompt).ok_or("rewrite prompt has no passage section")?;
            let want: Vec<&str> = prev.text.split_whitespace().take(100).collect();
            let got: Vec<&str> = section.split_whitespace().collect();
            ensure!(
                got == want,
                "`{}` round {}: passage is not the first 100 words of round {}",
                pool.example_id,
                cand.iteration,
                prev.iteration
            );
            ensure!(
                !prompt.contains(&raw.text),
                "`{}` round {} prompt contains r_raw",
                pool.example_id,
                cand.iteration
            );
            truncated += usize::from(prev.text.split_whitespace().count() > 100);
        }
    }
    ensure!(
        truncated > 0,
        "no previous round exceeded 100 words; truncation untested"
    );
    Ok(format!(
        "{} pools x 3; {truncated} of {} later rounds truncated",
        pools.len(),
        pools.len() * 2
    ))
}

async fn c6_style_arithmetic() -> Check {
    let scorer_template = builtin(TemplateName::Reconstruct);
    let probe = Scorer::new(
        client(Arc::new(MockBackend::new(BackendSpec::mock("s")))),
        scorer_template.clone(),
    )
    .map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let corpus = sim::synthetic_corpus(20, 6, Split::Test);
    let mut fixtures = MockFixtures::default();
    let mut expected = Vec::new();
    for ex in &corpus {
        let doc = concat_context(ex, "\n").text;
        let n = rng.random_range(1..=16);
        let lp: Vec<f64> = (0..n).map(|_| -10.0 * rng.random::<f64>()).collect();
        fixtures.score.insert(
            MockFixtures::score_key(&probe.context(&doc).map_err(err)?, &ex.question),
            lp.clone(),
        );
        let mut sum = 0.0;
        for v in lp.iter().rev() {
            sum += v;
        }
        expected.push((doc, ex.question.clone(), sum / n as f64));
    }
    let scorer = Scorer::new(
        client(Arc::new(
            MockBackend::new(BackendSpec::mock("s")).with_fixtures(fixtures),
        )),
        scorer_template,
    )
    .map_err(err)?;
    for (doc, q, mean) in &expected {
        let got = evalkit::style_score(doc, q, &scorer).await.map_err(err)?.s_orient;
        ensure!((got - mean).abs() <= 1e-9, "s_orient {got} vs mean {mean}");
    }

    let verifier = sim_verifier(Arc::new(sim::simulated_backend(BackendSpec::mock("v"))));
    let generator = Generator::new(
        client(Arc::new(sim::simulated_backend(BackendSpec::mock("g")))),
        builtin(TemplateName::Gen),
        GenParams::default(),
    )
    .map_err(err)?;
    let mut partial = 0;
    for ex in &corpus {
        let evidence = concat_context(ex, "\n").text;
        let generated = generator.background(&ex.question).await.map_err(err)?.text;
        let mixed = format!("{generated}\n{evidence}");
        for doc in [evidence.as_str(), generated.as_str(), mixed.as_str()] {
            let r = evalkit::inconsistency_rate(doc, &evidence, &verifier)
                .await
                .map_err(err)?;
            ensure!(
                r.r_inc + r.s_fact == 1.0,
                "r_inc {} + S_fact {} != 1",
                r.r_inc,
                r.s_fact
            );
            partial += usize::from(r.s_fact > 0.0 && r.s_fact < 1.0);
        }
    }
    Ok(format!(
        "{} fixture means; 60 verifier reports ({partial} strictly between 0 and 1)",
        expected.len()
    ))
}

async fn c8_consistency_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..100 {
        let n = rng.random_range(1..=20);
        let facts: Vec<AtomicFact> = (0..n)
            .map(|j| AtomicFact::verified(format!("fact {i}.{j}"), rng.random::<bool>()))
            .collect();
        let (base, degenerate) = support_ratio(&facts);
        ensure!(!degenerate, "non-empty set flagged degenerate");
        let mut plus = facts.clone();
        plus.push(AtomicFact::verified("added supported", true));
        let mut minus = facts.clone();
        minus.push(AtomicFact::verified("added unsupported", false));
        let (up, _) = support_ratio(&plus);
        let (down, _) = support_ratio(&minus);
        ensure!(
            up >= base && (base == 1.0 || up > base),
            "set {i}: supported fact moved {base} to {up}"
        );
        ensure!(
            down <= base && (base == 0.0 || down < base),
            "set {i}: unsupported fact moved {base} to {down}"
        );
    }
    ensure!(support_ratio(&[]) == (0.0, true), "empty set is not (0.0, degenerate)");

    let silent = MockBackend::new(BackendSpec::mock("v")).with_responder(Arc::new(|p: &Prompt| {
        p.user_text().contains("[Atomic Facts]:").then(String::new)
    }));
    let verifier = sim_verifier(Arc::new(silent));
    for doc in ["", "The gate was designed by Ada Holm."] {
        let r = evalkit::inconsistency_rate(doc, "evidence", &verifier)
            .await
            .map_err(err)?;
        ensure!(
            r.facts.is_empty() && r.s_fact == 0.0 && r.degenerate,
            "|F|=0 on {doc:?} gave {r:?}"
        );
    }
    Ok("100 sets monotone; |F|=0 is 0.0 and degenerate".into())
}

// ---------------------------------------------------------------------------
// Criterion 9: a reader that echoes the last answer it was shown.

const ANSWER_FORM: &str = "The answer to the question is ";
const PLAIN_FORM: &str = " was designed by ";

/// Names following `marker`, in presentation order.
fn stated(text: &str, marker: &str) -> Vec<String> {
    text.match_indices(marker)
        .filter_map(|(i, _)| {
            let rest = &text[i + marker.len()..];
            rest.find('.').map(|end| rest[..end].trim().to_string())
        })
        .collect()
}

/// Reader: the last answer stated in answer form, else the last one stated
/// plainly. Rewriter: leads with the passage's answer in answer form.
fn scripted(prompt: &Prompt) -> Option<String> {
    let text = prompt.user_text();
    if let Some(section) = passage_section(text) {
        let name = stated(section, ANSWER_FORM)
            .pop()
            .or_else(|| stated(section, PLAIN_FORM).pop())?;
        return Some(format!("{ANSWER_FORM}{name}. {section}"));
    }
    let start = text.find("Documents:\n")? + "Documents:\n".len();
    let end = text.rfind("\n\nQuestion:")?;
    let docs = &text[start..end];
    let answer = stated(docs, ANSWER_FORM)
        .pop()
        .or_else(|| stated(docs, PLAIN_FORM).pop())?;
    Some(format!("Answer: {answer}"))
}

async fn c9_cc_probe() -> Check {
    let mut set = Vec::new();
    for ex in sim::synthetic_corpus(40, 9, Split::Test) {
        let Some(p) = ex.passages.iter().find(|p| ref_contains(&p.text, &ex.gold_answers)) else {
            continue;
        };
        let subject = p.text.split(PLAIN_FORM).next().unwrap_or_default().to_string();
        let wrong = if ex.gold_answers[0] == "Orla Brisk" {
            "Nils Thal"
        } else {
            "Orla Brisk"
        };
        let cc = CcExample {
            base: ex.id.clone(),
            question: ex.question.clone(),
            gold_answers: ex.gold_answers.clone(),
            correct_retrieved: p.text.clone(),
            incorrect_generated: format!("Surviving accounts agree that {subject}{PLAIN_FORM}{wrong}."),
            generated_only_answer: wrong.to_string(),
        };
        ensure!(cc.is_conflicting(), "constructed pair `{}` is not conflicting", cc.base);
        set.push(cc);
    }
    let backend = Arc::new(MockBackend::new(BackendSpec::mock("scripted")).with_responder(Arc::new(scripted)));
    let reader = Reader::new(
        client(backend.clone()),
        builtin(TemplateName::Reader),
        GenParams::default(),
    )
    .map_err(err)?;
    let rewriter = Rewriter::new(client(backend), builtin(TemplateName::Rewrite), GenParams::default()).map_err(err)?;
    let bank = ExemplarBank::empty();
    let setup = RewriteSetup {
        rewriter: &rewriter,
        bank: &bank,
        rounds: 3,
        limit: 100,
    };
    let raw = evalkit::eval_cc(&set, CcVariant::Raw, &reader, None, CcOrder::Fixed, "\n\n", 4)
        .await
        .map_err(err)?;
    let rewritten = evalkit::eval_cc(
        &set,
        CcVariant::Rewritten,
        &reader,
        Some(&setup),
        CcOrder::Fixed,
        "\n\n",
        4,
    )
    .await
    .map_err(err)?;
    ensure!(raw.accuracy == 0.0, "raw accuracy {}", raw.accuracy);
    ensure!(rewritten.accuracy == 1.0, "rewritten accuracy {}", rewritten.accuracy);
    Ok(format!(
        "n={}: raw {:.1}, rewritten {:.1}",
        set.len(),
        raw.accuracy,
        rewritten.accuracy
    ))
}

async fn c10_latency() -> Check {
    let fixture = common::fixture(20);
    let mut p = fixture.open(&[]);
    p.run(Command::All).await.map_err(err)?;
    let path = p.report_path("latency");
    let envelope = evalkit::read_report::<LatencyReport>(&path, "latency").map_err(err)?;
    let report = envelope.body;
    report.validate().map_err(err)?;
    for stage in qream_cli::pipeline::STAGES {
        let s = report
            .stages
            .get(stage)
            .ok_or_else(|| format!("no latency for `{stage}`"))?;
        ensure!(s.n > 0 && s.p50_secs <= s.p95_secs, "`{stage}`: {s:?}");
    }
    for stage in ["rewrite", "score"] {
        ensure!(
            report.stages[stage].n == 20,
            "`{stage}` has n={}",
            report.stages[stage].n
        );
    }
    Ok(format!("{} stages with mean/p50/p95", report.stages.len()))
}

// ---------------------------------------------------------------------------
// Criterion 11: direction checks against a configured remote backend.

const ENV_ENDPOINT: &str = "QREAM_ACCEPTANCE_ENDPOINT";
const ENV_MODEL: &str = "QREAM_ACCEPTANCE_MODEL";
const ENV_KEY_VAR: &str = "QREAM_ACCEPTANCE_KEY_ENV";
const ENV_CORPUS: &str = "QREAM_ACCEPTANCE_CORPUS";

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

async fn c11_remote_direction() -> Result<Verdict, String> {
    let (Ok(endpoint), Ok(model)) = (std::env::var(ENV_ENDPOINT), std::env::var(ENV_MODEL)) else {
        return Ok(Verdict::Skip(format!("set {ENV_ENDPOINT} and {ENV_MODEL} to run")));
    };
    let spec = BackendSpec {
        id: "acceptance".into(),
        kind: BackendKind::Remote,
        endpoint: Some(endpoint.parse().map_err(err)?),
        model_name: Some(model),
        capabilities: Capabilities {
            generate: true,
            score_logprobs: true,
        },
        limits: Default::default(),
        api_key_env: std::env::var(ENV_KEY_VAR).ok(),
    };
    let client = BackendClient::new(Arc::new(RemoteBackend::new(spec).map_err(err)?)).map_err(err)?;
    let questions: Vec<QaExample> = match std::env::var(ENV_CORPUS) {
        Ok(path) => load_corpus(Path::new(&path), &CorpusSchema::default()).map_err(err)?,
        Err(_) => sim::synthetic_corpus(50, 11, Split::Test),
    };
    let questions: Vec<QaExample> = questions.into_iter().take(50).collect();
    let generator = Generator::new(client.clone(), builtin(TemplateName::Gen), GenParams::default()).map_err(err)?;
    let scorer = Scorer::new(client.clone(), builtin(TemplateName::Reconstruct)).map_err(err)?;
    let verifier = Verifier::new(
        client,
        builtin(TemplateName::FactExtract),
        builtin(TemplateName::FactVerify),
        GenParams::default(),
    )
    .map_err(err)?;
    let (generator, scorer, verifier) = (&generator, &scorer, &verifier);
    let rows: Vec<(f64, f64, f64)> = stream::iter(&questions)
        .map(|ex| async move {
            let raw = concat_context(ex, "\n").text;
            let generated = generator.background(&ex.question).await.map_err(err)?.text;
            let s_gen = evalkit::style_score(&generated, &ex.question, scorer)
                .await
                .map_err(err)?
                .s_orient;
            let s_raw = evalkit::style_score(&raw, &ex.question, scorer)
                .await
                .map_err(err)?
                .s_orient;
            let r_inc = evalkit::inconsistency_rate(&raw, &raw, verifier)
                .await
                .map_err(err)?
                .r_inc;
            Ok::<_, String>((s_gen, s_raw, r_inc))
        })
        .buffered(4)
        .collect::<Vec<_>>()
        .await
        .into_iter()
        .collect::<Result<_, _>>()?;
    let n = rows.len() as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let (gen, raw, r_inc) = (mean(|r| r.0), mean(|r| r.1), mean(|r| r.2));
    let detail = format!(
        "n={}: s_orient generated {gen:.3} vs raw {raw:.3}; self r_inc {r_inc:.3}",
        rows.len()
    );
    Ok(if gen > raw && r_inc < 0.05 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    })
}

// ---------------------------------------------------------------------------

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    std::panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

const FULL_RUN_QUESTIONS: usize = 120;

fn main() {
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let block = |f: std::pin::Pin<Box<dyn Future<Output = Check> + '_>>| guarded(|| rt.block_on(f));
    let mut results: Vec<(u8, &str, Check)> = vec![
        (1, "metric oracle equivalence", guarded(c1_metric_oracle)),
        (2, "composite-score identity", guarded(c2_composite_identity)),
    ];
    let full = guarded(|| rt.block_on(full_run(FULL_RUN_QUESTIONS)));
    match &full {
        Ok(run) => {
            results.push((3, "hard-filter soundness", guarded(|| c3_hard_filter(run))));
            results.push((4, "selection optimality", guarded(|| c4_selection_optimality(run))));
        }
        Err(e) => {
            results.push((3, "hard-filter soundness", Err(format!("pipeline run failed: {e}"))));
            results.push((4, "selection optimality", Err(format!("pipeline run failed: {e}"))));
        }
    }
    results.push((5, "iteration mechanics", block(Box::pin(c5_iteration_mechanics()))));
    results.push((6, "style-score arithmetic", block(Box::pin(c6_style_arithmetic()))));
    results.push((
        7,
        "end-to-end determinism",
        match &full {
            Ok(run) => block(Box::pin(c7_determinism(run))),
            Err(e) => Err(format!("pipeline run failed: {e}")),
        },
    ));
    results.push((
        8,
        "consistency-score properties",
        block(Box::pin(c8_consistency_properties())),
    ));
    results.push((9, "CC-probe mechanism", block(Box::pin(c9_cc_probe()))));
    results.push((10, "latency harness", block(Box::pin(c10_latency()))));

    let mut failed = 0;
    for (id, name, result) in &results {
        match result {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {reason}");
            }
        }
    }
    let name = "remote direction checks (informational)";
    match guarded(|| rt.block_on(c11_remote_direction())) {
        Ok(Verdict::Pass(d)) => println!("criterion 11 PASS  {name}: {d}"),
        Ok(Verdict::Fail(d)) => println!("criterion 11 FAIL  {name}: {d}"),
        Ok(Verdict::Skip(d)) => println!("criterion 11 SKIP  {name}: {d}"),
        Err(e) => println!("criterion 11 FAIL  {name}: {e}"),
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
    println!("all gating criteria passed");
}
