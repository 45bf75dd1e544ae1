//! Golden-rewrite selection and export of the instruction-tuning dataset.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::judge::{CandidateScore, FilterTarget};
use crate::records::{self, encode_records, RecordError, SCHEMA_FT};
use crate::rewriter::CandidatePool;
use crate::seeds::{PromptTemplate, TemplateError, TemplateName};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub bank_id: String,
    pub config_digest: String,
    /// Role -> backend id.
    pub backends: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenRecord {
    pub example_id: String,
    pub question: String,
    pub r_raw: String,
    pub golden_rewrite: String,
    pub s_perf: f64,
    pub s_fact: f64,
    pub s_total: f64,
    pub iteration: u32,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub input: String,
    pub target: String,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub example_id: String,
    pub iteration: u32,
    pub s_perf: f64,
    pub s_fact: f64,
    pub s_total: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub example_id: String,
    pub reason: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("pool `{example_id}`: candidate {iteration} has no score")]
    MissingScore { example_id: String, iteration: u32 },
    #[error("pool `{example_id}`: candidate {iteration} is unscored ({reason})")]
    Unscored {
        example_id: String,
        iteration: u32,
        reason: String,
    },
    #[error("nothing to export: the record list is empty")]
    EmptyExport,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

pub const EXCLUDED_NO_SURVIVOR: &str = "no candidate passed the hard filter";
pub const EXCLUDED_EMPTY_POOL: &str = "empty candidate pool";

/// Inputs of a selection that are not part of the pool itself.
pub struct SelectionContext<'a> {
    pub question: &'a str,
    pub r_raw: &'a str,
    pub bank_id: &'a str,
    pub backends: &'a BTreeMap<String, String>,
    /// Filter a candidate must additionally satisfy to be exported.
    pub training_filter: FilterTarget,
}

/// Either the golden record of a pool or the reason the question is excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum Selection {
    Selected(GoldenRecord),
    Excluded(Exclusion),
}

fn survives(score: &CandidateScore, training_filter: FilterTarget) -> Option<f64> {
    if score.passes_hard_filter && training_filter.accepts(score.answer_contains_gold, score.rewrite_contains_gold) {
        score.s_total
    } else {
        None
    }
}

/// Argmax of the composite score among hard-filter survivors; ties go to the
/// earliest iteration.
pub fn select_golden(
    pool: &CandidatePool,
    scores: &[CandidateScore],
    ctx: &SelectionContext<'_>,
) -> Result<Selection, DistillError> {
    let by_iteration: HashMap<u32, &CandidateScore> = scores
        .iter()
        .filter(|s| s.example_id == pool.example_id)
        .map(|s| (s.iteration, s))
        .collect();
    let mut best: Option<(f64, usize)> = None;
    for (idx, cand) in pool.candidates.iter().enumerate() {
        let score = by_iteration
            .get(&cand.iteration)
            .ok_or_else(|| DistillError::MissingScore {
                example_id: pool.example_id.clone(),
                iteration: cand.iteration,
            })?;
        if let Some(reason) = &score.unscored {
            return Err(DistillError::Unscored {
                example_id: pool.example_id.clone(),
                iteration: cand.iteration,
                reason: reason.clone(),
            });
        }
        if let Some(total) = survives(score, ctx.training_filter) {
            let better = match best {
                None => true,
                Some((b, b_idx)) => total > b || (total == b && cand.iteration < pool.candidates[b_idx].iteration),
            };
            if better {
                best = Some((total, idx));
            }
        }
    }
    let Some((_, idx)) = best else {
        let reason = if pool.candidates.is_empty() {
            match &pool.shortfall {
                Some(s) => format!("{EXCLUDED_EMPTY_POOL}: {s}"),
                None => EXCLUDED_EMPTY_POOL.to_string(),
            }
        } else {
            EXCLUDED_NO_SURVIVOR.to_string()
        };
        return Ok(Selection::Excluded(Exclusion {
            example_id: pool.example_id.clone(),
            reason,
        }));
    };
    let cand = &pool.candidates[idx];
    let score = by_iteration[&cand.iteration];
    Ok(Selection::Selected(GoldenRecord {
        example_id: pool.example_id.clone(),
        question: ctx.question.to_string(),
        r_raw: ctx.r_raw.to_string(),
        golden_rewrite: cand.text.clone(),
        s_perf: score.s_perf.expect("survivors are fully scored"),
        s_fact: score.s_fact.expect("survivors are fully scored"),
        s_total: score.s_total.expect("survivors are fully scored"),
        iteration: cand.iteration,
        provenance: Provenance {
            bank_id: ctx.bank_id.to_string(),
            config_digest: pool.config_digest.clone(),
            backends: ctx.backends.clone(),
        },
    }))
}

/// Wraps a golden record into the fine-tuning template.
pub fn training_record(record: &GoldenRecord, template: &PromptTemplate) -> Result<TrainingRecord, DistillError> {
    template.expect(TemplateName::Ft)?;
    let input = template.render_text(&BTreeMap::from([
        ("question", record.question.as_str()),
        ("context", record.r_raw.as_str()),
    ]))?;
    Ok(TrainingRecord {
        input,
        target: record.golden_rewrite.clone(),
        meta: TrainingMeta {
            example_id: record.example_id.clone(),
            iteration: record.iteration,
            s_perf: record.s_perf,
            s_fact: record.s_fact,
            s_total: record.s_total,
            provenance: record.provenance.clone(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub min: f64,
    pub p50: f64,
    pub max: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Some(Distribution {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            min: sorted[0],
            p50: sorted[(sorted.len() - 1) / 2],
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub input_questions: usize,
    pub excluded: usize,
    pub exported: usize,
    pub exclusions: Vec<Exclusion>,
    pub s_perf: Option<Distribution>,
    pub s_fact: Option<Distribution>,
    pub s_total: Option<Distribution>,
}

/// Sidecar path of the summary report for a dataset file.
pub fn summary_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".summary.json");
    dataset.with_file_name(name)
}

/// Writes one training record per golden record, in input order, plus the
/// summary report. Both files are written atomically.
pub fn export_dataset(
    records: &[GoldenRecord],
    exclusions: &[Exclusion],
    template: &PromptTemplate,
    path: &Path,
) -> Result<ExportSummary, DistillError> {
    if records.is_empty() {
        return Err(DistillError::EmptyExport);
    }
    let training = records
        .iter()
        .map(|r| training_record(r, template))
        .collect::<Result<Vec<_>, _>>()?;
    let pick = |f: fn(&GoldenRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let summary = ExportSummary {
        input_questions: records.len() + exclusions.len(),
        excluded: exclusions.len(),
        exported: records.len(),
        exclusions: exclusions.to_vec(),
        s_perf: Distribution::of(&pick(|r| r.s_perf)),
        s_fact: Distribution::of(&pick(|r| r.s_fact)),
        s_total: Distribution::of(&pick(|r| r.s_total)),
    };
    records::write_atomic(path, &encode_records(SCHEMA_FT, &training))?;
    let mut json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    json.push(b'\n');
    records::write_atomic(&summary_path(path), &json)?;
    Ok(summary)
}

pub fn load_dataset(path: &Path) -> Result<Vec<TrainingRecord>, RecordError> {
    records::read_records(path, SCHEMA_FT)
}
