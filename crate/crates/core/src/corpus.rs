//! QA examples with pre-retrieved passages: loading, validation, raw-context
//! construction and context-conflicting probe sets.

use std::collections::HashMap;
use std::path::Path;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::BackendError;
use crate::judge::{contains_answer, normalize_answer, Reader};
use crate::records::{self, RecordError, SCHEMA_CC, SCHEMA_CORPUS};
use crate::seeds::Generator;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
    pub rank: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    pub passages: Vec<Passage>,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_doc: Option<String>,
}

/// The rank-ordered concatenation of an example's passages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawContext {
    pub text: String,
    pub source_example: String,
    pub passage_count: usize,
}

/// A correct retrieved document paired with an incorrect generated one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcExample {
    pub base: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    pub correct_retrieved: String,
    pub incorrect_generated: String,
    pub generated_only_answer: String,
}

impl CcExample {
    /// Both construction invariants, checked mechanically.
    pub fn is_conflicting(&self) -> bool {
        contains_answer(&self.correct_retrieved, &self.gold_answers)
            && !contains_answer(&self.generated_only_answer, &self.gold_answers)
    }
}

/// Load-time options.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusSchema {
    /// Split assigned to records that do not name one.
    pub default_split: Split,
    /// Keep only the top-K passages of each record.
    pub max_passages: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate id `{id}` (first seen on line {first_line})")]
    DuplicateId { id: String, line: usize, first_line: usize },
    #[error("example `{id}`: {source}")]
    Stage {
        id: String,
        #[source]
        source: BackendError,
    },
}

#[derive(Deserialize)]
struct WirePassage {
    #[serde(default)]
    doc_id: Option<String>,
    #[serde(default)]
    title: Option<String>,
    text: String,
    #[serde(default)]
    rank: Option<u32>,
    #[serde(default)]
    score: Option<f64>,
}

fn schema_err(line: usize, field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Schema {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn required<'a>(obj: &'a serde_json::Map<String, Value>, field: &str, line: usize) -> Result<&'a Value, CorpusError> {
    obj.get(field)
        .filter(|v| !v.is_null())
        .ok_or_else(|| schema_err(line, field, "missing required field"))
}

fn parse_record(text: &str, line: usize, schema: &CorpusSchema) -> Result<QaExample, CorpusError> {
    let value: Value = serde_json::from_str(text).map_err(|e| schema_err(line, "<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema_err(line, "<record>", "record is not an object"))?;

    let id = required(obj, "id", line)?
        .as_str()
        .ok_or_else(|| schema_err(line, "id", "expected a string"))?
        .to_string();
    if id.trim().is_empty() {
        return Err(schema_err(line, "id", "must be non-empty"));
    }
    let question = required(obj, "question", line)?
        .as_str()
        .ok_or_else(|| schema_err(line, "question", "expected a string"))?
        .to_string();

    let answers: Vec<String> = serde_json::from_value(required(obj, "answers", line)?.clone())
        .map_err(|_| schema_err(line, "answers", "expected a list of strings"))?;
    if !answers.iter().any(|a| !normalize_answer(a).is_empty()) {
        return Err(schema_err(line, "answers", "needs at least one non-empty alias"));
    }

    let wire: Vec<WirePassage> = serde_json::from_value(required(obj, "passages", line)?.clone())
        .map_err(|e| schema_err(line, "passages", e.to_string()))?;
    if wire.is_empty() {
        return Err(schema_err(line, "passages", "needs at least one passage"));
    }
    let explicit_ranks = wire.iter().filter(|p| p.rank.is_some()).count();
    if explicit_ranks != 0 && explicit_ranks != wire.len() {
        return Err(schema_err(
            line,
            "passages",
            "rank must be given for all passages or none",
        ));
    }
    let mut passages: Vec<Passage> = wire
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let rank = p.rank.unwrap_or(i as u32 + 1);
            Passage {
                doc_id: p.doc_id.unwrap_or_else(|| format!("{id}:{rank}")),
                title: p.title.filter(|t| !t.trim().is_empty()),
                text: p.text,
                rank,
                score: p.score,
            }
        })
        .collect();
    passages.sort_by_key(|p| p.rank);
    for (i, p) in passages.iter().enumerate() {
        if p.rank != i as u32 + 1 {
            return Err(schema_err(
                line,
                "passages",
                "ranks must be distinct and contiguous from 1",
            ));
        }
        if p.text.trim().is_empty() {
            return Err(schema_err(
                line,
                "passages",
                format!("passage rank {} has empty text", p.rank),
            ));
        }
    }
    if let Some(k) = schema.max_passages {
        passages.truncate(k.max(1));
    }

    let split = match obj.get("split") {
        None | Some(Value::Null) => schema.default_split,
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|_| schema_err(line, "split", "expected one of train, dev, test"))?,
    };
    let generated_doc = match obj.get("generated_doc") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(schema_err(line, "generated_doc", "expected a string")),
    };

    Ok(QaExample {
        id,
        question,
        gold_answers: answers,
        passages,
        split,
        generated_doc,
    })
}

/// Loads and validates a corpus file.
pub fn load_corpus(path: &Path, schema: &CorpusSchema) -> Result<Vec<QaExample>, CorpusError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for raw in records::read_lines(path, SCHEMA_CORPUS)? {
        let example = parse_record(&raw.text, raw.line, schema)?;
        if let Some(first_line) = seen.insert(example.id.clone(), raw.line) {
            return Err(CorpusError::DuplicateId {
                id: example.id,
                line: raw.line,
                first_line,
            });
        }
        out.push(example);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, examples: &[QaExample]) -> Result<(), CorpusError> {
    Ok(records::write_records(path, SCHEMA_CORPUS, examples)?)
}

/// Joins passage texts in rank order; a titled passage renders as
/// `Title: <title>\n<text>`.
pub fn concat_context(example: &QaExample, separator: &str) -> RawContext {
    let mut ordered: Vec<&Passage> = example.passages.iter().collect();
    ordered.sort_by_key(|p| p.rank);
    let text = ordered
        .iter()
        .map(|p| match &p.title {
            Some(title) => format!("Title: {title}\n{}", p.text),
            None => p.text.clone(),
        })
        .collect::<Vec<_>>()
        .join(separator);
    RawContext {
        text,
        source_example: example.id.clone(),
        passage_count: ordered.len(),
    }
}

pub fn load_cc(path: &Path) -> Result<Vec<CcExample>, CorpusError> {
    Ok(records::read_records(path, SCHEMA_CC)?)
}

pub fn write_cc(path: &Path, examples: &[CcExample]) -> Result<(), CorpusError> {
    Ok(records::write_records(path, SCHEMA_CC, examples)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcSkip {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CcBuild {
    pub examples: Vec<CcExample>,
    pub skipped: Vec<CcSkip>,
}

pub const SKIP_NO_CORRECT_RETRIEVAL: &str = "no correct retrieval";
pub const SKIP_GENERATED_CORRECT: &str = "generated document leads the reader to a gold answer";

/// Builds context-conflicting instances. Output order follows input order.
pub async fn build_cc_set(
    corpus: &[QaExample],
    generator: &Generator,
    reader: &Reader,
    concurrency: usize,
) -> Result<CcBuild, CorpusError> {
    let outcomes: Vec<Result<CcExample, CcSkip>> = stream::iter(corpus)
        .map(|ex| async move {
            let Some(correct) = ex.passages.iter().find(|p| contains_answer(&p.text, &ex.gold_answers)) else {
                return Ok(Err(CcSkip {
                    id: ex.id.clone(),
                    reason: SKIP_NO_CORRECT_RETRIEVAL.into(),
                }));
            };
            let stage = |source| CorpusError::Stage {
                id: ex.id.clone(),
                source,
            };
            let generated = generator.background(&ex.question).await.map_err(stage)?;
            let answer = reader.read_answer(&generated.text, &ex.question).await.map_err(stage)?;
            if contains_answer(&answer.text, &ex.gold_answers) {
                return Ok(Err(CcSkip {
                    id: ex.id.clone(),
                    reason: SKIP_GENERATED_CORRECT.into(),
                }));
            }
            Ok::<_, CorpusError>(Ok(CcExample {
                base: ex.id.clone(),
                question: ex.question.clone(),
                gold_answers: ex.gold_answers.clone(),
                correct_retrieved: correct.text.clone(),
                incorrect_generated: generated.text,
                generated_only_answer: answer.text,
            }))
        })
        .buffered(concurrency.max(1))
        .try_collect()
        .await?;

    let mut build = CcBuild::default();
    for outcome in outcomes {
        match outcome {
            Ok(cc) => build.examples.push(cc),
            Err(skip) => build.skipped.push(skip),
        }
    }
    if build.examples.is_empty() {
        tracing::warn!(inputs = corpus.len(), "no context-conflicting examples qualified");
    }
    Ok(build)
}
