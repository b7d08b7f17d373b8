//! Self-validation of oracle hits.
//!
//! A candidate passes through up to five stages, each asked `repeats` times
//! with the epoch folded into the cassette key and combined with AND:
//!
//! 1. `ir_bug_type`: both cases classified against the IR catalog; same type required.
//! 2. `real_mismatch` for cross-environment types, otherwise `same_bug_pattern`.
//! 3. `oracle_correctness`: reverse hypothesis, would the oracle fire on a correct API?
//! 4. `issue_suitability`: four checks on the original issue, cached per issue.
//! 5. `criteria_judgment`: criteria from the issue, then a judgment/challenge/summary debate.
//!
//! The first failing stage ends the pipeline.

mod ir;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use ir::{
    classify_facts, derive_facts, match_ir, Attrs, CheckKind, Condition, ExecMode, FaultKind,
    IrBugType, Operand, Outcome, Severity, Tolerance, TraceFact,
};

use crate::corpus::{IssueRecord, IssueRef};
use crate::error::{Error, Result};
use crate::fields;
use crate::fuzz::TransferredTest;
use crate::harness::{format_trace, ExecStatus, ExecutionResult, TraceEntry};
use crate::jsonl;
use crate::llm::{sha256_hex, Gateway, TemplateId};
use crate::pattern::ContextAwareBugPattern;

/// Reason recorded when the original issue cannot supply criteria.
pub const UNVERIFIABLE: &str = "unverifiable: criteria unavailable";

/// AND over the epochs of one stage.
pub fn vote(epoch_results: &[bool]) -> bool {
    debug_assert!(!epoch_results.is_empty(), "vote over zero epochs");
    epoch_results.iter().all(|&r| r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    IrBugType,
    RealMismatch,
    SameBugPattern,
    OracleCorrectness,
    IssueSuitability,
    CriteriaJudgment,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::IrBugType => "ir_bug_type",
            Stage::RealMismatch => "real_mismatch",
            Stage::SameBugPattern => "same_bug_pattern",
            Stage::OracleCorrectness => "oracle_correctness",
            Stage::IssueSuitability => "issue_suitability",
            Stage::CriteriaJudgment => "criteria_judgment",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Audit record of one LLM answer used by a stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub template_id: TemplateId,
    pub response_sha256: String,
    /// False when the answer never parsed and the epoch defaulted to fail.
    pub parsed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub epochs: Vec<bool>,
    pub passed: bool,
    /// Decided from execution facts without an LLM call.
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub transcripts: Vec<EpochRecord>,
}

impl StageResult {
    fn voted(stage: Stage, epochs: Vec<bool>, transcripts: Vec<EpochRecord>) -> Self {
        StageResult {
            stage,
            passed: vote(&epochs),
            epochs,
            deterministic: false,
            transcripts,
        }
    }

    fn deterministic(stage: Stage, repeats: u32, passed: bool) -> Self {
        StageResult {
            stage,
            epochs: vec![passed; repeats as usize],
            passed,
            deterministic: true,
            transcripts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub source_issue: IssueRef,
    pub target_api: String,
    pub stage_results: Vec<StageResult>,
    pub r#final: bool,
    pub failure_stage: Option<Stage>,
    pub reason: String,
    /// Set when an operational error interrupted the pipeline; the candidate
    /// should be validated again on resume.
    #[serde(default)]
    pub incomplete: bool,
    #[serde(default)]
    pub original_type: Option<IrBugType>,
    #[serde(default)]
    pub transferred_type: Option<IrBugType>,
}

impl ValidationVerdict {
    fn new(source_issue: IssueRef, target_api: &str) -> Self {
        ValidationVerdict {
            source_issue,
            target_api: target_api.to_string(),
            stage_results: Vec::new(),
            r#final: false,
            failure_stage: None,
            reason: String::new(),
            incomplete: false,
            original_type: None,
            transferred_type: None,
        }
    }

    /// A verdict decided outside the pipeline, e.g. by a test stub.
    pub fn decided(
        source_issue: IssueRef,
        target_api: &str,
        passed: bool,
        reason: impl Into<String>,
    ) -> Self {
        ValidationVerdict {
            r#final: passed,
            reason: reason.into(),
            ..ValidationVerdict::new(source_issue, target_api)
        }
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageResult> {
        self.stage_results.iter().find(|s| s.stage == stage)
    }

    /// Records `result`; returns whether the pipeline may continue.
    fn push(&mut self, result: StageResult) -> bool {
        let passed = result.passed;
        let stage = result.stage;
        self.stage_results.push(result);
        if !passed {
            self.failure_stage = Some(stage);
            if self.reason.is_empty() {
                self.reason = format!("filtered at {stage}");
            }
        }
        passed
    }

    fn interrupted(&mut self, stage: Stage, error: &Error) {
        self.incomplete = true;
        self.failure_stage = Some(stage);
        self.reason = format!("interrupted at {stage}: {error}");
    }
}

/// The four suitability flags for an original issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suitability {
    pub api_level_relevance: bool,
    pub has_demo: bool,
    pub developer_negative_feedback_absent: bool,
    pub complexity_acceptable: bool,
}

impl Suitability {
    pub fn all(&self) -> bool {
        self.api_level_relevance
            && self.has_demo
            && self.developer_negative_feedback_absent
            && self.complexity_acceptable
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugCriteria {
    pub issue_ref: IssueRef,
    pub suitability: Suitability,
    /// Present only when every suitability flag holds.
    pub criteria_text: Option<String>,
}

/// Everything the pipeline needs about one oracle hit.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub issue: &'a IssueRecord,
    pub pattern: &'a ContextAwareBugPattern,
    /// Trace of the instrumented original reproduction, if it was run.
    pub original_trace: &'a [TraceEntry],
    pub test: &'a TransferredTest,
    pub execution: &'a ExecutionResult,
}

/// Decides whether a candidate is a real bug. Never fails: operational
/// errors yield an `incomplete` verdict.
pub trait SelfValidator: Sync {
    fn validate(&self, candidate: &Candidate<'_>) -> ValidationVerdict;
}

impl<F> SelfValidator for F
where
    F: Fn(&Candidate<'_>) -> ValidationVerdict + Sync,
{
    fn validate(&self, candidate: &Candidate<'_>) -> ValidationVerdict {
        self(candidate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorConfig {
    pub repeats: u32,
    pub debate: bool,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            repeats: 3,
            debate: true,
        }
    }
}

#[derive(Debug, Clone)]
struct IssueAssessment {
    stage: StageResult,
    criteria: BugCriteria,
}

/// The LLM-backed pipeline.
pub struct Validator<'g> {
    gateway: &'g Gateway,
    config: ValidatorConfig,
    issues: Mutex<BTreeMap<IssueRef, IssueAssessment>>,
}

struct Answer<T> {
    value: Option<T>,
    record: EpochRecord,
}

impl<'g> Validator<'g> {
    pub fn new(gateway: &'g Gateway, config: ValidatorConfig) -> Self {
        assert!(config.repeats > 0, "repeats must be positive");
        Validator {
            gateway,
            config,
            issues: Mutex::new(BTreeMap::new()),
        }
    }

    fn epochs(&self) -> std::ops::Range<u32> {
        0..self.config.repeats
    }

    /// Asks and parses; an answer that never parses becomes `None` rather
    /// than an error.
    fn ask<T>(
        &self,
        template: TemplateId,
        slots: &[(&str, &str)],
        epoch: u32,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<Answer<T>> {
        let mut last_sha = String::new();
        let result = self.gateway.ask(template, slots, epoch, |text| {
            last_sha = sha256_hex(text);
            parse(text)
        });
        let (value, parsed) = match result {
            Ok(v) => (Some(v), true),
            Err(
                e @ (Error::Unparseable { .. } | Error::UnknownIrType(_) | Error::MissingField(_)),
            ) => {
                log::warn!("{template} epoch {epoch}: {e}; counting as a failed epoch");
                (None, false)
            }
            Err(e) => return Err(e),
        };
        Ok(Answer {
            value,
            record: EpochRecord {
                epoch,
                template_id: template,
                response_sha256: last_sha,
                parsed,
            },
        })
    }

    fn verdict_line(template: TemplateId, label: &'static str) -> impl Fn(&str) -> Result<bool> {
        move |text| {
            fields::yes_no(text, label).ok_or_else(|| Error::Unparseable {
                template: template.to_string(),
                message: format!("no `{label}: YES|NO` line"),
            })
        }
    }

    fn yes_no_stage(
        &self,
        stage: Stage,
        template: TemplateId,
        slots: &[(&str, &str)],
    ) -> Result<StageResult> {
        let mut epochs = Vec::new();
        let mut records = Vec::new();
        for epoch in self.epochs() {
            let a = self.ask(
                template,
                slots,
                epoch,
                Self::verdict_line(template, "VERDICT"),
            )?;
            epochs.push(a.value.unwrap_or(false));
            records.push(a.record);
        }
        Ok(StageResult::voted(stage, epochs, records))
    }

    /// Classifies both cases per epoch. Returns the stage and the first
    /// parsed (original, transferred) labels.
    pub fn classify_ir_type(
        &self,
        c: &Candidate<'_>,
    ) -> Result<(StageResult, Option<(IrBugType, IrBugType)>)> {
        let catalog = IrBugType::catalog_text();
        let original_trace = format_trace(c.original_trace);
        let transferred_trace = format_trace(&c.execution.trace);
        let slots = [
            ("ir_catalog", catalog.as_str()),
            ("original_program", c.pattern.repro_program.as_str()),
            ("original_trace", original_trace.as_str()),
            ("transferred_program", c.test.program_source.as_str()),
            ("transferred_trace", transferred_trace.as_str()),
        ];
        let parse = |text: &str| -> Result<(IrBugType, IrBugType)> {
            let label = |name: &str| {
                fields::last_labeled(text, name).ok_or_else(|| Error::Unparseable {
                    template: TemplateId::SameBugType.to_string(),
                    message: format!("no `{name}:` line"),
                })
            };
            Ok((
                label("ORIGINAL_TYPE")?.parse()?,
                label("TRANSFERRED_TYPE")?.parse()?,
            ))
        };
        let mut epochs = Vec::new();
        let mut records = Vec::new();
        let mut labels = None;
        for epoch in self.epochs() {
            let a = self.ask(TemplateId::SameBugType, &slots, epoch, parse)?;
            epochs.push(a.value.is_some_and(|(o, t)| o == t));
            labels = labels.or(a.value);
            records.push(a.record);
        }
        Ok((
            StageResult::voted(Stage::IrBugType, epochs, records),
            labels,
        ))
    }

    pub fn check_real_mismatch(&self, c: &Candidate<'_>) -> Result<StageResult> {
        let trace = format_trace(&c.execution.trace);
        let output = c.execution.output_text();
        let slots = [
            ("program", c.test.program_source.as_str()),
            ("trace", trace.as_str()),
            ("execution_output", output.as_str()),
        ];
        self.yes_no_stage(Stage::RealMismatch, TemplateId::RealMismatch, &slots)
    }

    pub fn check_same_bug_pattern(&self, c: &Candidate<'_>) -> Result<StageResult> {
        let summary = c.pattern.summary();
        let trace = format_trace(&c.execution.trace);
        let output = c.execution.output_text();
        let slots = [
            ("original_pattern", summary.as_str()),
            ("original_program", c.pattern.repro_program.as_str()),
            ("transferred_program", c.test.program_source.as_str()),
            ("transferred_trace", trace.as_str()),
            ("execution_output", output.as_str()),
        ];
        self.yes_no_stage(Stage::SameBugPattern, TemplateId::SameBugPattern, &slots)
    }

    /// True means the oracle is sound.
    pub fn check_oracle_correctness(&self, c: &Candidate<'_>) -> Result<StageResult> {
        let trace = format_trace(&c.execution.trace);
        let output = c.execution.output_text();
        let slots = [
            ("target_api", c.test.target_api.as_str()),
            ("adapted_oracle", c.test.adapted_oracle.as_str()),
            ("program", c.test.program_source.as_str()),
            ("trace", trace.as_str()),
            ("execution_output", output.as_str()),
        ];
        self.yes_no_stage(
            Stage::OracleCorrectness,
            TemplateId::BugFreeVerification,
            &slots,
        )
    }

    /// The four checks, each voted across epochs.
    pub fn assess_issue_suitability(
        &self,
        issue: &IssueRecord,
    ) -> Result<(StageResult, Suitability)> {
        const CHECKS: [TemplateId; 4] = [
            TemplateId::IssueApiRelevance,
            TemplateId::IssueHasDemo,
            TemplateId::IssueComments,
            TemplateId::ReproComplexity,
        ];
        let text = issue.full_text();
        let slots = [("issue_text", text.as_str())];
        let mut flags = [true; 4];
        let mut epochs = Vec::new();
        let mut records = Vec::new();
        for epoch in self.epochs() {
            let mut all = true;
            for (i, t) in CHECKS.into_iter().enumerate() {
                let a = self.ask(t, &slots, epoch, Self::verdict_line(t, "VERDICT"))?;
                let ok = a.value.unwrap_or(false);
                flags[i] &= ok;
                all &= ok;
                records.push(a.record);
            }
            epochs.push(all);
        }
        let suitability = Suitability {
            api_level_relevance: flags[0],
            has_demo: flags[1],
            developer_negative_feedback_absent: flags[2],
            complexity_acceptable: flags[3],
        };
        Ok((
            StageResult::voted(Stage::IssueSuitability, epochs, records),
            suitability,
        ))
    }

    /// Extracts criteria text. `None` when the reply never yields it.
    pub fn extract_criteria(&self, issue: &IssueRecord, bug_api: &str) -> Result<Option<String>> {
        let text = issue.full_text();
        let slots = [("bug_api", bug_api), ("issue_text", text.as_str())];
        let a = self.ask(TemplateId::CriteriaExtraction, &slots, 0, |reply| {
            fields::parse(reply)
                .remove("criteria")
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .ok_or_else(|| Error::MissingField("criteria".into()))
        })?;
        Ok(a.value)
    }

    fn assessment(&self, c: &Candidate<'_>) -> Result<IssueAssessment> {
        let key = c.issue.issue_ref();
        if let Some(a) = self.issues.lock().unwrap().get(&key) {
            return Ok(a.clone());
        }
        let (stage, suitability) = self.assess_issue_suitability(c.issue)?;
        let criteria_text = if suitability.all() {
            self.extract_criteria(c.issue, &c.pattern.bug_api)?
        } else {
            None
        };
        let a = IssueAssessment {
            stage,
            criteria: BugCriteria {
                issue_ref: key.clone(),
                suitability,
                criteria_text,
            },
        };
        self.issues.lock().unwrap().insert(key, a.clone());
        Ok(a)
    }

    /// Judgment, challenge and summary per epoch; an epoch passes when the
    /// summary says the case is not a false positive.
    pub fn judge_with_debate(&self, criteria: &str, c: &Candidate<'_>) -> Result<StageResult> {
        let trace = format_trace(&c.execution.trace);
        let output = c.execution.output_text();
        let slots = [
            ("criteria", criteria),
            ("target_api", c.test.target_api.as_str()),
            ("program", c.test.program_source.as_str()),
            ("trace", trace.as_str()),
            ("execution_output", output.as_str()),
        ];
        if !self.config.debate {
            return self.yes_no_stage(Stage::CriteriaJudgment, TemplateId::RealBug, &slots);
        }
        let judgment_prompt = TemplateId::RealBug.render(&slots)?;
        let mut epochs = Vec::new();
        let mut records = Vec::new();
        for epoch in self.epochs() {
            let judgment = self.gateway.prompt_rendered(
                TemplateId::RealBug,
                judgment_prompt.clone(),
                epoch,
            )?;
            records.push(EpochRecord {
                epoch,
                template_id: TemplateId::RealBug,
                response_sha256: sha256_hex(&judgment.text),
                parsed: true,
            });
            let mut conversation = format!("{judgment_prompt}\n\n[Assistant]\n{}", judgment.text);
            let challenge = self.gateway.prompt(
                TemplateId::DebateChallenge,
                &[("conversation", &conversation)],
                epoch,
            )?;
            records.push(EpochRecord {
                epoch,
                template_id: TemplateId::DebateChallenge,
                response_sha256: sha256_hex(&challenge.text),
                parsed: true,
            });
            conversation.push_str(&format!(
                "\n\n[Reviewer]\nPlease challenge this from the opposing viewpoint.\n\n[Assistant]\n{}",
                challenge.text
            ));
            let summary = self.ask(
                TemplateId::DebateSummary,
                &[("conversation", &conversation)],
                epoch,
                Self::verdict_line(TemplateId::DebateSummary, "FALSE_POSITIVE"),
            )?;
            epochs.push(summary.value.is_some_and(|false_positive| !false_positive));
            records.push(summary.record);
        }
        Ok(StageResult::voted(Stage::CriteriaJudgment, epochs, records))
    }

    fn run(
        &self,
        c: &Candidate<'_>,
        v: &mut ValidationVerdict,
    ) -> std::result::Result<(), (Stage, Error)> {
        let at = |stage: Stage| move |e: Error| (stage, e);
        let repeats = self.config.repeats;

        let facts = derive_facts(&c.test.program_source, c.execution);
        let signal_crash =
            c.execution.status == ExecStatus::Crash && match_ir(&facts, IrBugType::ExecutionCrash);
        if signal_crash {
            v.transferred_type = Some(IrBugType::ExecutionCrash);
            v.push(StageResult::deterministic(Stage::IrBugType, repeats, true));
            v.push(StageResult::deterministic(
                Stage::SameBugPattern,
                repeats,
                true,
            ));
        } else {
            let (stage, labels) = self.classify_ir_type(c).map_err(at(Stage::IrBugType))?;
            if let Some((o, t)) = labels {
                v.original_type = Some(o);
                v.transferred_type = Some(t);
            }
            if !v.push(stage) {
                return Ok(());
            }
            let symptom = match v.transferred_type {
                Some(t) if t.is_mismatch() => self
                    .check_real_mismatch(c)
                    .map_err(at(Stage::RealMismatch))?,
                _ => self
                    .check_same_bug_pattern(c)
                    .map_err(at(Stage::SameBugPattern))?,
            };
            if !v.push(symptom) {
                return Ok(());
            }
        }

        let oracle = self
            .check_oracle_correctness(c)
            .map_err(at(Stage::OracleCorrectness))?;
        if !v.push(oracle) {
            return Ok(());
        }

        let assessment = self.assessment(c).map_err(at(Stage::IssueSuitability))?;
        let suitable = assessment.criteria.suitability.all();
        if !suitable {
            v.reason = UNVERIFIABLE.to_string();
        }
        if !v.push(assessment.stage) {
            return Ok(());
        }
        let Some(criteria) = assessment.criteria.criteria_text else {
            v.reason = UNVERIFIABLE.to_string();
            v.push(StageResult::deterministic(
                Stage::CriteriaJudgment,
                repeats,
                false,
            ));
            return Ok(());
        };
        let judgment = self
            .judge_with_debate(&criteria, c)
            .map_err(at(Stage::CriteriaJudgment))?;
        if v.push(judgment) {
            v.r#final = true;
            v.reason = "confirmed by every stage".to_string();
        }
        Ok(())
    }

    /// Runs the staged pipeline on one oracle hit.
    pub fn validate_candidate(&self, c: &Candidate<'_>) -> ValidationVerdict {
        let mut v = ValidationVerdict::new(c.pattern.source_issue.clone(), &c.test.target_api);
        if let Err((stage, e)) = self.run(c, &mut v) {
            log::warn!("validation of {} interrupted: {e}", c.test.target_api);
            v.interrupted(stage, &e);
        }
        v
    }
}

impl SelfValidator for Validator<'_> {
    fn validate(&self, candidate: &Candidate<'_>) -> ValidationVerdict {
        self.validate_candidate(candidate)
    }
}

pub fn append_verdict(path: &Path, verdict: &ValidationVerdict) -> Result<()> {
    jsonl::append(path, verdict)
}

pub fn load_verdicts(path: &Path) -> Result<Vec<ValidationVerdict>> {
    Ok(jsonl::read_or_empty(path)?
        .into_iter()
        .map(|(_, v)| v)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_is_and() {
        assert!(vote(&[true, true, true]));
        assert!(!vote(&[true, false, true]));
        let trues = (0..8u8)
            .filter(|m| vote(&[m & 1 != 0, m & 2 != 0, m & 4 != 0]))
            .count();
        assert_eq!(trues, 1);
    }

    #[test]
    fn verdict_serializes_final_keyword() {
        let v = ValidationVerdict::decided(IssueRef::new("r", 1), "a.b", true, "stub");
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["final"], true);
        let back: ValidationVerdict = serde_json::from_value(json).unwrap();
        assert_eq!(back, v);
    }
}
