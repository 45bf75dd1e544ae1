//! Question-oriented rewriting of retrieved evidence for retrieval-augmented
//! QA, with dual-criteria rejection sampling and evaluation metrics.
//!
//! Modules follow the pipeline: [`corpus`] loads examples, [`seeds`] builds
//! the stylistic exemplar bank, [`rewriter`] produces candidate pools,
//! [`judge`] scores them, [`distill`] selects and exports training data and
//! [`evalkit`] measures documents and readers. Every model call goes through
//! [`backend`].

pub mod backend;
pub mod corpus;
pub mod distill;
pub mod evalkit;
pub mod judge;
pub mod records;
pub mod rewriter;
pub mod seeds;

pub use backend::{Backend, BackendClient, BackendError, BackendSpec, GenParams, Prompt};
pub use corpus::{CcExample, Passage, QaExample, RawContext, Split};
pub use judge::{CandidateScore, FilterTarget, Reader, Verifier};
pub use rewriter::{CandidatePool, RewriteCandidate, Rewriter};
pub use seeds::{ExemplarBank, Generator, StylisticSeed, TemplateName, TemplateSet};
