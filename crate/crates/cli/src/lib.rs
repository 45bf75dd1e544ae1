//! Command-line orchestration of the rewriting pipeline: a TOML run config,
//! a resumable manifest per output directory, and one subcommand per stage.

pub mod config;
pub mod manifest;
pub mod pipeline;

use qream_core::backend::BackendError;
use qream_core::corpus::CorpusError;
use qream_core::distill::DistillError;
use qream_core::evalkit::EvalError;
use qream_core::records::RecordError;
use qream_core::rewriter::RewriteError;
use qream_core::seeds::{SeedError, TemplateError};

pub use config::RunConfig;
pub use manifest::{RunManifest, StageStatus};
pub use pipeline::{Command, Options, Pipeline, PoolScores, StageOutcome};

/// Failure classes, one per process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("stage `{stage}` has not completed (status: {status}); run it first")]
    Dependency { stage: String, status: String },
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Backend(_) => 2,
            Failure::Data(_) | Failure::Dependency { .. } => 3,
        }
    }
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        let root = match &e {
            BackendError::Failed { source, .. } => source.as_ref(),
            other => other,
        };
        match root {
            BackendError::Config(_) | BackendError::Capability { .. } => Failure::Config(e.to_string()),
            _ => Failure::Backend(e.to_string()),
        }
    }
}

impl From<RecordError> for Failure {
    fn from(e: RecordError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<TemplateError> for Failure {
    fn from(e: TemplateError) -> Self {
        match e {
            TemplateError::ExemplarOverlap(_) => Failure::Data(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Stage { id, source } => match Failure::from(source) {
                Failure::Backend(m) => Failure::Backend(format!("example `{id}`: {m}")),
                Failure::Config(m) => Failure::Config(format!("example `{id}`: {m}")),
                other => other,
            },
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<SeedError> for Failure {
    fn from(e: SeedError) -> Self {
        match e {
            SeedError::ZeroSeeds => Failure::Config(e.to_string()),
            SeedError::NotEnoughQuestions { .. } => Failure::Data(e.to_string()),
            SeedError::Generation { .. } => Failure::Backend(e.to_string()),
            SeedError::Template(t) => t.into(),
        }
    }
}

impl From<RewriteError> for Failure {
    fn from(e: RewriteError) -> Self {
        match e {
            RewriteError::BadConfig { .. } => Failure::Config(e.to_string()),
            RewriteError::Template(t) => t.into(),
        }
    }
}

impl From<DistillError> for Failure {
    fn from(e: DistillError) -> Self {
        match e {
            DistillError::Template(t) => t.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Backend(b) => b.into(),
            EvalError::Rewrite(r) => r.into(),
            EvalError::Template(t) => t.into(),
            EvalError::Record(r) => r.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}
