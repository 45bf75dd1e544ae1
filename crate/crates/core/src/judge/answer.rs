//! Answer normalization and the string-level QA metrics.

use std::collections::HashMap;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Punctuation stripped during normalization: ASCII punctuation plus common
/// typographic quotes, dashes and ellipsis.
pub fn is_answer_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{2026}'
                | '\u{00AB}'
                | '\u{00BB}'
                | '\u{00BF}'
                | '\u{00A1}'
        )
}

/// Lowercases, drops punctuation, removes the articles a/an/the as whole
/// words and collapses whitespace.
pub fn normalize_answer(text: &str) -> String {
    let stripped: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !is_answer_punctuation(*c))
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

fn f1_against(pred_tokens: &[&str], gold: &str) -> f64 {
    let gold_norm = normalize_answer(gold);
    let gold_tokens: Vec<&str> = gold_norm.split_whitespace().collect();
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred_tokens {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_tokens.len() as f64;
    let recall = overlap as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-level F1 of `pred` against the best-matching gold alias.
pub fn token_f1(pred: &str, golds: &[impl AsRef<str>]) -> f64 {
    let pred_norm = normalize_answer(pred);
    let pred_tokens: Vec<&str> = pred_norm.split_whitespace().collect();
    golds
        .iter()
        .map(|g| f1_against(&pred_tokens, g.as_ref()))
        .fold(0.0, f64::max)
}

/// Whether the normalized text contains some normalized, non-empty gold alias.
pub fn contains_answer(text: &str, golds: &[impl AsRef<str>]) -> bool {
    let hay = normalize_answer(text);
    golds.iter().any(|g| {
        let needle = normalize_answer(g.as_ref());
        !needle.is_empty() && hay.contains(&needle)
    })
}

/// Exact match after normalization against any alias.
pub fn exact_match(pred: &str, golds: &[impl AsRef<str>]) -> bool {
    let p = normalize_answer(pred);
    golds.iter().any(|g| normalize_answer(g.as_ref()) == p)
}
