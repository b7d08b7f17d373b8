//! Bug-pattern transfer fuzzing for deep-learning library APIs.
//!
//! The pipeline mines fix-linked issues, distills each into a
//! [`ContextAwareBugPattern`](pattern::ContextAwareBugPattern), ranks
//! functionally similar APIs by embedding cosine, synthesizes transferred
//! tests for them, executes those tests through an external harness and
//! filters the oracle hits through a staged, voted self-validation pipeline.
//!
//! Every LLM call goes through [`llm::Gateway`], which supports deterministic
//! record/replay via cassettes so whole campaigns can be re-run offline.

pub mod config;
pub mod corpus;
pub mod error;
pub mod fuzz;
pub mod harness;
pub mod llm;
pub mod matcher;
pub mod pattern;
pub mod report;
pub mod validate;

mod fields;
mod jsonl;

pub use error::{Error, Result};

pub use corpus::{Corpus, IssueRecord, PullRequestRecord};
pub use fuzz::{CampaignConfig, CampaignState, Finding, TransferredTest};
pub use harness::{ExecutionResult, Harness, TraceEntry};
pub use llm::{
    Cost, CostLedger, EmbeddingVector, Gateway, LlmRequest, LlmResponse, Mode, TemplateId,
};
pub use matcher::{ApiRecord, EmbeddingDb, SimilarApiQueue};
pub use pattern::{BugCategory, ContextAwareBugPattern};
pub use validate::{IrBugType, TraceFact, ValidationVerdict};

/// The exact stdout line a transferred test prints when its oracle fires.
pub const BUG_MARKER: &str = "BUG FOUND";
