//! A simulated world for running the whole pipeline offline.
//!
//! [`responder`] recognizes each built-in prompt family by its markers and
//! answers the way a crude but consistent model would: the reader extracts a
//! name from the sentence that best matches the question, the rewriter
//! reorders passage sentences around the question and sometimes drops or
//! invents one, and the verifier accepts a statement when every token occurs
//! in the evidence. [`synthetic_corpus`] builds questions this world can
//! answer. Everything is a pure function of the prompt, so runs are
//! reproducible.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mock::rng_from_digest;
use super::{BackendSpec, MockBackend, Prompt, Responder, ScoreResponder};
use crate::corpus::{Passage, QaExample, Split};
use crate::judge::normalize_answer;
use crate::records::digest_json;

const STOPWORDS: &[&str] = &[
    "who", "what", "which", "when", "where", "why", "how", "is", "was", "were", "are", "of", "in", "on", "by", "to",
    "and", "or", "for", "did", "does", "do", "it", "its", "that", "this", "with", "as", "at", "from",
];

const ADJECTIVES: &[&str] = &[
    "northern", "silver", "old", "grand", "eastern", "crimson", "hidden", "royal", "upper", "twin", "stone", "lesser",
];
const NOUNS: &[&str] = &[
    "bridge",
    "library",
    "tower",
    "harbor",
    "cathedral",
    "observatory",
    "aqueduct",
    "market",
    "theatre",
    "lighthouse",
    "canal",
    "gate",
];
const PLACES: &[&str] = &[
    "Avalon", "Brindle", "Corvast", "Dunmore", "Elsworth", "Farrowby", "Galdric", "Hollin", "Istrea", "Jorvik",
    "Kelda", "Lunmark",
];
const FIRST: &[&str] = &[
    "Ada", "Bertram", "Celia", "Dorian", "Edda", "Felix", "Greta", "Hector", "Ilse", "Jonas", "Katrin", "Leopold",
    "Mira", "Nils", "Orla", "Pavel",
];
const LAST: &[&str] = &[
    "Varga",
    "Holm",
    "Ostrander",
    "Pell",
    "Quist",
    "Ravel",
    "Sorensen",
    "Thal",
    "Ulric",
    "Wendt",
    "Yarrow",
    "Zeller",
    "Abbott",
    "Brisk",
    "Corda",
    "Dahl",
];
// Names only the simulated generator invents; never gold answers.
const FAKE: &[&str] = &[
    "Marek Fennimore",
    "Tilda Ashgrove",
    "Rupert Kallas",
    "Sabine Morrow",
    "Oskar Tenhaven",
    "Vera Lindqvist",
];
const FEATURES: &[&str] = &["foundations", "arches", "ornaments", "windows", "stairways", "vaults"];

fn tokens(text: &str) -> BTreeSet<String> {
    normalize_answer(text).split_whitespace().map(str::to_string).collect()
}

fn content_tokens(text: &str) -> BTreeSet<String> {
    tokens(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Text between the first `start` marker and the following `end` marker.
fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    Some(rest.find(end).map_or(rest, |to| &rest[..to]).trim())
}

/// Sentences ending in `.`, `?` or `!`, or at a line break.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch == '\n' {
            push_sentence(&mut out, &mut current);
            continue;
        }
        current.push(ch);
        if matches!(ch, '.' | '?' | '!') {
            push_sentence(&mut out, &mut current);
        }
    }
    push_sentence(&mut out, &mut current);
    out
}

fn push_sentence(out: &mut Vec<String>, current: &mut String) {
    let s = current.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    current.clear();
}

fn overlap(sentence: &str, question: &BTreeSet<String>) -> usize {
    content_tokens(sentence).intersection(question).count()
}

/// First run of capitalized words not mentioned in the question, skipping the
/// sentence-initial word.
fn name_in(sentence: &str, question: &BTreeSet<String>) -> Option<String> {
    let mut run: Vec<&str> = Vec::new();
    for word in sentence.split_whitespace().skip(1) {
        let bare = word.trim_matches(|c: char| !c.is_alphanumeric());
        let capitalized = bare.chars().next().is_some_and(char::is_uppercase);
        if capitalized && !question.contains(&bare.to_lowercase()) {
            run.push(bare);
        } else if !run.is_empty() {
            break;
        }
    }
    (!run.is_empty()).then(|| run.join(" "))
}

/// The simulated reader: a name from the best-matching sentence that has one.
pub fn read(documents: &str, question: &str) -> String {
    let q = content_tokens(question);
    let mut best: Option<(usize, String)> = None;
    for s in sentences(documents) {
        let Some(name) = name_in(&s, &q) else { continue };
        let score = overlap(&s, &q);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, name));
        }
    }
    best.map_or_else(|| "unknown".to_string(), |(_, name)| name)
}

fn topic(question: &str) -> String {
    let q = question.trim().trim_end_matches('?');
    let mut words = q.split_whitespace();
    let first = words.next().unwrap_or_default();
    let rest: Vec<&str> = words.collect();
    if STOPWORDS.contains(&first.to_lowercase().as_str()) {
        format!("{} {}", first.to_lowercase(), rest.join(" "))
    } else {
        q.to_string()
    }
}

fn generate_background(question: &str, rng: &mut ChaCha8Rng) -> String {
    let fake = FAKE[rng.random_range(0..FAKE.len())];
    format!(
        "{question}\nAccounts of {topic} credit {fake}. Most popular histories repeat this attribution. The surrounding history is described in several regional guides.",
        question = question.trim(),
        topic = topic(question),
    )
}

fn rewrite(question: &str, context: &str, rng: &mut ChaCha8Rng) -> String {
    let q = content_tokens(question);
    let mut ranked: Vec<(usize, String)> = sentences(context)
        .into_iter()
        .filter(|s| !s.ends_with('?'))
        .map(|s| (overlap(&s, &q), s))
        .collect();
    ranked.sort_by_key(|r| std::cmp::Reverse(r.0));
    let roll: f64 = rng.random();
    if roll < 0.2 && ranked.len() > 1 {
        ranked.remove(0);
    }
    let mut body: Vec<String> = ranked.into_iter().map(|(_, s)| s).collect();
    if rng.random::<f64>() < 0.35 {
        let fake = FAKE[rng.random_range(0..FAKE.len())];
        let at = rng.random_range(0..=body.len());
        body.insert(at, format!("It was later restored by {fake}."));
    }
    if body.is_empty() {
        return context.trim().to_string();
    }
    format!("{}\n{}", question.trim(), body.join(" "))
}

fn extract_facts(document: &str) -> String {
    sentences(document)
        .into_iter()
        .filter(|s| !s.ends_with('?'))
        .take(12)
        .map(|s| format!("- {s}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn verify(evidence: &str, statement: &str) -> &'static str {
    let known = tokens(evidence);
    if tokens(statement).is_subset(&known) {
        "True"
    } else {
        "False"
    }
}

/// Completion for a prompt rendered from one of the built-in templates, or
/// `None` for prompts this world does not recognize.
pub fn respond(prompt: &Prompt) -> Option<String> {
    let text = prompt.text();
    let mut rng = rng_from_digest(&prompt.digest());
    if text.contains("[Statement] ") && text.contains("(True/False)") {
        let evidence = between(&text, "[Document] ", "\n\n[Statement] ")?;
        let statement = between(&text, "[Statement] ", "\n\n[Answer]")?;
        return Some(verify(evidence, statement).to_string());
    }
    if text.contains("[Atomic Facts]:") {
        return Some(extract_facts(between(&text, "[Document] ", "\n\n[Atomic Facts]:")?));
    }
    if text.contains("[Rewritten Background]") {
        let question = between(&text, "[Target Question]\n", "\n\n[Passage]")
            .or_else(|| between(&text, "[Question]\n", "\n\n[Passage]"))?;
        let context = between(&text, "[Passage]\n", "\n\n[Rewritten Background]")?;
        return Some(rewrite(question, context, &mut rng));
    }
    if text.contains("Background document:") {
        let question = between(&text, "Question: ", "\n\nBackground document:")?;
        return Some(generate_background(question, &mut rng));
    }
    if text.contains("Documents:\n") {
        let user = prompt.user_text();
        let documents = between(user, "Documents:\n", "\n\nQuestion: ")?;
        let question = between(&user[user.rfind("\n\nQuestion: ")?..], "Question: ", "\nAnswer:")?;
        return Some(format!("Answer: {}", read(documents, question)));
    }
    None
}

/// Log-probabilities that favour target tokens already present in the
/// context, so documents organized around a question reconstruct it better.
pub fn score(context: &str, target: &str) -> Vec<f64> {
    let known = tokens(context);
    let mut rng = rng_from_digest(&digest_json(&(context, target)));
    target
        .split_whitespace()
        .map(|word| {
            let base = if tokens(word).is_subset(&known) { -0.4 } else { -2.6 };
            base - 0.1 * rng.random::<f64>()
        })
        .collect()
}

pub fn responder() -> Responder {
    Arc::new(respond)
}

pub fn score_responder() -> ScoreResponder {
    Arc::new(|context, target| Some(score(context, target)))
}

/// A mock backend that answers through the simulated world.
pub fn simulated_backend(spec: BackendSpec) -> MockBackend {
    MockBackend::new(spec)
        .with_responder(responder())
        .with_score_responder(score_responder())
}

/// `n` questions answerable in the simulated world, each with five ranked
/// passages. Roughly one in ten has no passage mentioning the answer.
/// Questions are distinct for any `n` up to 1728.
pub fn synthetic_corpus(n: usize, seed: u64, split: Split) -> Vec<QaExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects: Vec<(usize, usize, usize)> = (0..ADJECTIVES.len())
        .flat_map(|a| (0..NOUNS.len()).flat_map(move |b| (0..PLACES.len()).map(move |c| (a, b, c))))
        .collect();
    subjects.shuffle(&mut rng);
    let name = |rng: &mut ChaCha8Rng| {
        format!(
            "{} {}",
            FIRST[rng.random_range(0..FIRST.len())],
            LAST[rng.random_range(0..LAST.len())]
        )
    };
    let subject = |(a, b, c): (usize, usize, usize)| format!("the {} {} of {}", ADJECTIVES[a], NOUNS[b], PLACES[c]);
    let passage = |subj: &str, who: &str, place: &str, rng: &mut ChaCha8Rng| {
        let mut s = subj.to_string();
        s[..1].make_ascii_uppercase();
        format!(
            "{s} was designed by {who}. It remains a landmark of {place}. Records from {} describe its {} in detail.",
            rng.random_range(1620..1910),
            FEATURES[rng.random_range(0..FEATURES.len())],
        )
    };
    let mut out = Vec::with_capacity(n);
    let mut next_distractor = n;
    for i in 0..n {
        let subj_idx = subjects[i % subjects.len()];
        let subj = subject(subj_idx);
        let gold = name(&mut rng);
        let has_gold = rng.random::<f64>() >= 0.1;
        let gold_rank = rng.random_range(1..=5u32);
        let passages = (1..=5u32)
            .map(|rank| {
                let text = if has_gold && rank == gold_rank {
                    passage(&subj, &gold, PLACES[subj_idx.2], &mut rng)
                } else {
                    let other = subjects[next_distractor % subjects.len()];
                    next_distractor += 1;
                    let who = name(&mut rng);
                    passage(&subject(other), &who, PLACES[other.2], &mut rng)
                };
                Passage {
                    doc_id: format!("syn-{i}:{rank}"),
                    title: None,
                    text,
                    rank,
                    score: None,
                }
            })
            .collect();
        out.push(QaExample {
            id: format!("syn-{i}"),
            question: format!("Who designed {subj}?"),
            gold_answers: vec![gold],
            passages,
            split,
            generated_doc: None,
        });
    }
    out
}
