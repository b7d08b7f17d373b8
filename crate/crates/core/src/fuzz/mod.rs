//! Feedback-driven transfer fuzzing.
//!
//! ```text
//! init := true; found := {}
//! while init or found != {}:
//!     targets := top-window untested APIs of the queue
//!     for a in found: add the top-expansion similar APIs of a; remove a
//!     for t in targets:
//!         p := transfer(pattern, t); run(p)
//!         if BUG FOUND and self-validation passes: add t to found
//!     init := false
//! ```
//!
//! On top of that loop a campaign stops when a batch comes out empty, at the
//! per-pattern test cap, or when the LLM budget runs out. State is kept in
//! [`CampaignState`] so an interrupted campaign can resume mid-round.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{IssueRecord, IssueRef};
use crate::error::{Error, Result};
use crate::fields;
use crate::harness::{ExecStatus, ExecutionResult, Harness, TraceEntry};
use crate::llm::{Cost, Gateway, TemplateId};
use crate::matcher::{ApiIndex, ApiRecord, SimilarApiQueue};
use crate::pattern::{BugCategory, ContextAwareBugPattern};
use crate::report::{CampaignSnapshot, SnapshotRefs};
use crate::validate::{
    derive_facts, match_ir, Candidate, IrBugType, SelfValidator, ValidationVerdict,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub window_size: usize,
    pub queue_depth: usize,
    pub expansion_count: usize,
    pub repeats: u32,
    pub timeout_seconds: f64,
    pub max_tests_per_pattern: usize,
    pub budget: Option<Cost>,
    /// Tests generated and executed concurrently within a batch.
    pub parallelism: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            window_size: 10,
            queue_depth: 1000,
            expansion_count: 10,
            repeats: 3,
            timeout_seconds: 60.0,
            max_tests_per_pattern: 200,
            budget: None,
            parallelism: 1,
        }
    }
}

impl CampaignConfig {
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("window_size", self.window_size),
            ("queue_depth", self.queue_depth),
            ("expansion_count", self.expansion_count),
            ("repeats", self.repeats as usize),
            ("max_tests_per_pattern", self.max_tests_per_pattern),
            ("parallelism", self.parallelism),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.timeout_seconds > 0.0) {
            return Err(Error::Config("timeout_seconds must be positive".into()));
        }
        if self.window_size > self.queue_depth {
            return Err(Error::Config(format!(
                "window_size {} exceeds queue_depth {}",
                self.window_size, self.queue_depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferredTest {
    pub source_issue: IssueRef,
    pub target_api: String,
    pub program_source: String,
    pub adapted_context: String,
    pub adapted_oracle: String,
    pub rationale: String,
}

/// Adapts `pattern` to `target` through the transfer prompt.
pub fn transfer_bug(
    pattern: &ContextAwareBugPattern,
    target: &ApiRecord,
    gateway: &Gateway,
) -> Result<TransferredTest> {
    if target.qualified_name == pattern.bug_api {
        return Err(Error::InvalidRequest(format!(
            "cannot transfer a pattern onto its own API `{}`",
            pattern.bug_api
        )));
    }
    let signature = target.signature();
    let doc = if target.doc_text.trim().is_empty() {
        "(no documentation)"
    } else {
        target.doc_text.as_str()
    };
    let slots = [
        ("bug_api", pattern.bug_api.as_str()),
        ("triggering_context", pattern.triggering_context.as_str()),
        ("expected_behavior", pattern.expected_behavior.as_str()),
        ("actual_behavior", pattern.actual_behavior.as_str()),
        ("oracle_design", pattern.oracle_design.as_str()),
        ("repro_program", pattern.repro_program.as_str()),
        ("target_api", target.qualified_name.as_str()),
        ("target_signature", signature.as_str()),
        ("target_doc", doc),
    ];
    gateway.ask(TemplateId::BugTransfer, &slots, 0, |text| {
        parse_transfer(text, pattern, &target.qualified_name)
    })
}

fn parse_transfer(
    text: &str,
    pattern: &ContextAwareBugPattern,
    target_api: &str,
) -> Result<TransferredTest> {
    let mut f = fields::parse(text);
    let mut take = |name: &str| {
        f.remove(name)
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| Error::MissingField(name.into()))
    };
    let test = TransferredTest {
        source_issue: pattern.source_issue.clone(),
        target_api: target_api.to_string(),
        rationale: take("rationale")?.trim().to_string(),
        adapted_context: take("adapted_context")?.trim().to_string(),
        adapted_oracle: take("adapted_oracle")?.trim().to_string(),
        program_source: take("program")?,
    };
    let unparseable = |message: &str| Error::Unparseable {
        template: TemplateId::BugTransfer.to_string(),
        message: message.into(),
    };
    if !test.program_source.contains(crate::BUG_MARKER) {
        return Err(unparseable("program never prints the BUG FOUND marker"));
    }
    if !fields::delimiters_balanced(&test.program_source) {
        return Err(unparseable("program has unbalanced delimiters"));
    }
    if test.adapted_context == pattern.triggering_context
        && test.adapted_oracle == pattern.oracle_design
    {
        return Err(unparseable(
            "context and oracle were copied verbatim instead of adapted",
        ));
    }
    Ok(test)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub source_issue: IssueRef,
    pub target_api: String,
    pub bug_category: BugCategory,
    pub round: u32,
    pub test: TransferredTest,
    pub execution_status: ExecStatus,
    pub signal_name: Option<String>,
    pub trace: Vec<TraceEntry>,
    pub stdout: String,
    pub verdict: ValidationVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    GenerationFailed,
    Passed,
    OracleFired,
    Crashed,
    TimedOut,
}

/// One line of the ordered campaign trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRecord {
    pub round: u32,
    pub target_api: String,
    pub outcome: TestOutcome,
    /// `Some` only when self-validation ran.
    pub verdict_final: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum HaltReason {
    /// The loop condition became false: no new bug API in the last round.
    Completed,
    /// A round produced an empty batch.
    QueueExhausted,
    TestCap,
    Budget,
    /// The bug API has no embedding, so there is no queue to walk.
    NoAnchorEmbedding,
    /// A recoverable LLM or validation failure; resume retries the pending targets.
    Interrupted {
        message: String,
    },
}

impl HaltReason {
    /// Whether resuming could make progress.
    pub fn is_resumable(&self) -> bool {
        matches!(self, HaltReason::Budget | HaltReason::Interrupted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub pattern: ContextAwareBugPattern,
    pub api_queue: SimilarApiQueue,
    pub tested: BTreeSet<String>,
    /// Insertion ordered; drained in order when the next batch is built.
    pub found_new_bug_api: Vec<String>,
    pub findings: Vec<Finding>,
    pub round: u32,
    pub init: bool,
    pub tests_generated: usize,
    /// Targets of the current round not yet applied.
    pub pending: Vec<String>,
    pub log: Vec<TestRecord>,
    pub original_trace: Vec<TraceEntry>,
    pub halted: Option<HaltReason>,
}

impl CampaignState {
    pub fn new(pattern: ContextAwareBugPattern, api_queue: SimilarApiQueue) -> Self {
        CampaignState {
            pattern,
            api_queue,
            tested: BTreeSet::new(),
            found_new_bug_api: Vec::new(),
            findings: Vec::new(),
            round: 0,
            init: true,
            tests_generated: 0,
            pending: Vec::new(),
            log: Vec::new(),
            original_trace: Vec::new(),
            halted: None,
        }
    }

    /// Tested APIs in the order they were applied.
    pub fn trace(&self) -> Vec<&str> {
        self.log.iter().map(|r| r.target_api.as_str()).collect()
    }

    pub fn is_halted(&self) -> bool {
        self.halted.is_some()
    }

    /// Checks the structural invariants.
    pub fn check(&self) -> std::result::Result<(), String> {
        if let Some(p) = self.pending.iter().find(|p| self.tested.contains(*p)) {
            return Err(format!("pending target {p} already tested"));
        }
        if let Some(f) = self
            .findings
            .iter()
            .find(|f| !self.tested.contains(&f.target_api))
        {
            return Err(format!("finding on untested API {}", f.target_api));
        }
        if let Some(a) = self
            .found_new_bug_api
            .iter()
            .find(|a| !self.tested.contains(*a))
        {
            return Err(format!("found API {a} not tested"));
        }
        let logged: BTreeSet<&str> = self.log.iter().map(|r| r.target_api.as_str()).collect();
        if logged.len() != self.log.len() {
            return Err("an API was tested twice".into());
        }
        if !logged
            .iter()
            .copied()
            .eq(self.tested.iter().map(String::as_str))
        {
            return Err("trace and tested set disagree".into());
        }
        Ok(())
    }
}

/// Builds the next round's targets and drains `found_new_bug_api`.
///
/// The window comes first, then the expansions of each found API in the
/// order they were found. Tested APIs, the bug API and duplicates are
/// skipped.
pub fn next_batch(
    state: &mut CampaignState,
    config: &CampaignConfig,
    index: &dyn ApiIndex,
) -> Result<Vec<String>> {
    let anchor = state.pattern.bug_api.clone();
    let mut batch: Vec<String> = Vec::new();
    let eligible = |api: &str, batch: &[String]| {
        api != anchor && !state.tested.contains(api) && !batch.iter().any(|b| b == api)
    };

    for api in state.api_queue.targets() {
        if batch.len() == config.window_size {
            break;
        }
        if eligible(api, &batch) {
            batch.push(api.to_string());
        }
    }

    let found = std::mem::take(&mut state.found_new_bug_api);
    for a in &found {
        let Some(queue) = index.similar(a, config.expansion_count + 1)? else {
            log::warn!("no embedding for found API {a}; no expansion");
            continue;
        };
        let similars: Vec<&str> = queue.targets().take(config.expansion_count).collect();
        for api in similars {
            if eligible(api, &batch) {
                batch.push(api.to_string());
            }
        }
    }
    Ok(batch)
}

/// Applies one test result: the target always becomes tested; a finding is
/// recorded only when the oracle fired and the verdict passed.
pub fn record_finding(
    state: &mut CampaignState,
    test: &TransferredTest,
    execution: &ExecutionResult,
    verdict: Option<&ValidationVerdict>,
) {
    let target = test.target_api.clone();
    state.tested.insert(target.clone());
    state.pending.retain(|p| *p != target);
    let outcome = outcome_of(execution);
    state.log.push(TestRecord {
        round: state.round,
        target_api: target.clone(),
        outcome,
        verdict_final: verdict.map(|v| v.r#final),
    });
    let Some(verdict) = verdict else { return };
    if is_candidate(test, execution) && verdict.r#final {
        let bug_category = if verdict.transferred_type == Some(IrBugType::ExecutionCrash)
            || execution.status == ExecStatus::Crash
        {
            BugCategory::Crash
        } else {
            state.pattern.bug_category
        };
        state.findings.push(Finding {
            source_issue: test.source_issue.clone(),
            target_api: target.clone(),
            bug_category,
            round: state.round,
            test: test.clone(),
            execution_status: execution.status,
            signal_name: execution.signal_name.clone(),
            trace: execution.trace.clone(),
            stdout: execution.stdout.clone(),
            verdict: verdict.clone(),
        });
        if !state.found_new_bug_api.contains(&target) {
            state.found_new_bug_api.push(target);
        }
    }
}

fn record_generation_failure(state: &mut CampaignState, target: &str) {
    state.tested.insert(target.to_string());
    state.pending.retain(|p| p != target);
    state.log.push(TestRecord {
        round: state.round,
        target_api: target.to_string(),
        outcome: TestOutcome::GenerationFailed,
        verdict_final: None,
    });
}

fn outcome_of(execution: &ExecutionResult) -> TestOutcome {
    match execution.status {
        ExecStatus::Timeout => TestOutcome::TimedOut,
        ExecStatus::Crash => TestOutcome::Crashed,
        ExecStatus::Ok if execution.bug_found => TestOutcome::OracleFired,
        ExecStatus::Ok => TestOutcome::Passed,
    }
}

/// The oracle printed the marker, or the process died of a crash signal.
pub fn is_candidate(test: &TransferredTest, execution: &ExecutionResult) -> bool {
    execution.bug_found
        || (execution.status == ExecStatus::Crash
            && match_ir(
                &derive_facts(&test.program_source, execution),
                IrBugType::ExecutionCrash,
            ))
}

enum TestResult {
    Ran {
        test: TransferredTest,
        execution: ExecutionResult,
        verdict: Option<ValidationVerdict>,
    },
    GenerationFailed {
        target: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Halted(HaltReason),
}

/// Everything a campaign talks to.
pub struct Campaign<'a> {
    pub issue: &'a IssueRecord,
    pub index: &'a dyn ApiIndex,
    pub gateway: &'a Gateway,
    pub harness: &'a dyn Harness,
    pub validator: &'a dyn SelfValidator,
    pub config: CampaignConfig,
    /// Snapshot and per-test artifacts go here when set.
    pub dir: Option<PathBuf>,
    pub refs: SnapshotRefs,
}

impl<'a> Campaign<'a> {
    pub fn new(
        issue: &'a IssueRecord,
        index: &'a dyn ApiIndex,
        gateway: &'a Gateway,
        harness: &'a dyn Harness,
        validator: &'a dyn SelfValidator,
        config: CampaignConfig,
    ) -> Self {
        Campaign {
            issue,
            index,
            gateway,
            harness,
            validator,
            config,
            dir: None,
            refs: SnapshotRefs::default(),
        }
    }

    pub fn with_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dir = Some(dir.into());
        self
    }

    pub fn with_refs(mut self, refs: SnapshotRefs) -> Self {
        self.refs = refs;
        self
    }

    /// Fresh state for `pattern`: the similar-API queue plus a trace of the
    /// original reproduction for the validator.
    pub fn start(&self, pattern: &ContextAwareBugPattern) -> Result<CampaignState> {
        self.config.check()?;
        pattern.check()?;
        let Some(queue) = self
            .index
            .similar(&pattern.bug_api, self.config.queue_depth)?
        else {
            log::warn!(
                "{}: bug API {} has no embedding; skipping",
                pattern.source_issue,
                pattern.bug_api
            );
            let empty = SimilarApiQueue {
                anchor_api: pattern.bug_api.clone(),
                entries: Vec::new(),
                capacity: self.config.queue_depth,
            };
            let mut state = CampaignState::new(pattern.clone(), empty);
            state.halted = Some(HaltReason::NoAnchorEmbedding);
            self.persist(&state)?;
            return Ok(state);
        };
        let mut state = CampaignState::new(pattern.clone(), queue);
        state.original_trace = self.original_trace(pattern);
        self.persist(&state)?;
        Ok(state)
    }

    fn original_trace(&self, pattern: &ContextAwareBugPattern) -> Vec<TraceEntry> {
        let run = || -> Result<Vec<TraceEntry>> {
            let program = self.harness.instrument(&pattern.repro_program)?;
            Ok(self
                .harness
                .execute(&program, self.config.timeout_seconds)?
                .trace)
        };
        run().unwrap_or_else(|e| {
            log::warn!("could not trace the original reproduction: {e}");
            Vec::new()
        })
    }

    /// Runs `state` until it halts.
    pub fn run(&self, mut state: CampaignState) -> Result<CampaignState> {
        state.halted = state.halted.filter(|h| !h.is_resumable());
        while state.halted.is_none() {
            if let StepOutcome::Halted(reason) = self.step(&mut state)? {
                log::info!("{}: halted ({reason:?})", state.pattern.source_issue);
            }
        }
        Ok(state)
    }

    /// One round: builds a batch if none is pending, then applies results
    /// in submission order until the batch is done or the campaign halts.
    pub fn step(&self, state: &mut CampaignState) -> Result<StepOutcome> {
        if let Some(h) = &state.halted {
            return Ok(StepOutcome::Halted(h.clone()));
        }
        if state.pending.is_empty() {
            if !(state.init || !state.found_new_bug_api.is_empty()) {
                return self.halt(state, HaltReason::Completed);
            }
            let remaining = self
                .config
                .max_tests_per_pattern
                .saturating_sub(state.tests_generated);
            if remaining == 0 {
                return self.halt(state, HaltReason::TestCap);
            }
            let mut batch = next_batch(state, &self.config, self.index)?;
            if batch.is_empty() {
                return self.halt(state, HaltReason::QueueExhausted);
            }
            batch.truncate(remaining);
            state.round += 1;
            state.init = false;
            state.pending = batch;
            self.persist(state)?;
        }

        let chunk = self.config.parallelism.max(1);
        while !state.pending.is_empty() {
            let targets: Vec<String> = state.pending.iter().take(chunk).cloned().collect();
            let results: Vec<Result<TestResult>> = if targets.len() == 1 {
                vec![self.run_one(state, &targets[0])]
            } else {
                let shared: &CampaignState = state;
                std::thread::scope(|s| {
                    let handles: Vec<_> = targets
                        .iter()
                        .map(|t| s.spawn(move || self.run_one(shared, t)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("test worker panicked"))
                        .collect()
                })
            };
            for result in results {
                match result {
                    Ok(TestResult::GenerationFailed { target, reason }) => {
                        log::info!("generation failed for {target}: {reason}");
                        state.tests_generated += 1;
                        record_generation_failure(state, &target);
                    }
                    Ok(TestResult::Ran {
                        test,
                        execution,
                        verdict,
                    }) => {
                        if let Some(v) = verdict.as_ref().filter(|v| v.incomplete) {
                            if self.budget_spent() {
                                return self.halt(state, HaltReason::Budget);
                            }
                            let message = v.reason.clone();
                            return self.halt(state, HaltReason::Interrupted { message });
                        }
                        state.tests_generated += 1;
                        self.write_artifacts(state, &test, &execution, verdict.as_ref())?;
                        record_finding(state, &test, &execution, verdict.as_ref());
                    }
                    Err(e) if e.is_budget() => return self.halt(state, HaltReason::Budget),
                    Err(e @ Error::Harness(_)) => {
                        self.persist(state)?;
                        return Err(e);
                    }
                    Err(e) => {
                        return self.halt(
                            state,
                            HaltReason::Interrupted {
                                message: e.to_string(),
                            },
                        );
                    }
                }
                self.persist(state)?;
            }
        }
        Ok(StepOutcome::Continue)
    }

    /// The validator swallows gateway errors into an incomplete verdict, so
    /// budget exhaustion is read back from the gateway.
    fn budget_spent(&self) -> bool {
        self.gateway
            .budget()
            .is_some_and(|cap| self.gateway.spent() >= cap)
    }

    fn halt(&self, state: &mut CampaignState, reason: HaltReason) -> Result<StepOutcome> {
        state.halted = Some(reason.clone());
        self.persist(state)?;
        Ok(StepOutcome::Halted(reason))
    }

    fn run_one(&self, state: &CampaignState, target: &str) -> Result<TestResult> {
        let record = self
            .index
            .record(target)
            .unwrap_or_else(|| ApiRecord::new(target));
        let test = match transfer_bug(&state.pattern, &record, self.gateway) {
            Ok(t) => t,
            Err(
                e @ (Error::Unparseable { .. } | Error::MissingField(_) | Error::InvalidRequest(_)),
            ) => {
                return Ok(TestResult::GenerationFailed {
                    target: target.to_string(),
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        };
        let program = match self.harness.instrument(&test.program_source) {
            Ok(p) => p,
            Err(e) => {
                log::warn!(
                    "instrumentation of the {target} test failed ({e}); running it uninstrumented"
                );
                test.program_source.clone()
            }
        };
        let execution = self
            .harness
            .execute(&program, self.config.timeout_seconds)?;
        let verdict = is_candidate(&test, &execution).then(|| {
            self.validator.validate(&Candidate {
                issue: self.issue,
                pattern: &state.pattern,
                original_trace: &state.original_trace,
                test: &test,
                execution: &execution,
            })
        });
        Ok(TestResult::Ran {
            test,
            execution,
            verdict,
        })
    }

    fn persist(&self, state: &CampaignState) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        CampaignSnapshot::new(&self.config, self.issue, state, &self.refs)
            .save(&dir.join(CampaignSnapshot::FILE_NAME))
    }

    fn write_artifacts(
        &self,
        state: &CampaignState,
        test: &TransferredTest,
        execution: &ExecutionResult,
        verdict: Option<&ValidationVerdict>,
    ) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let slug: String = test
            .target_api
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '.' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let test_dir = dir
            .join("tests")
            .join(format!("{:04}-{slug}", state.log.len() + 1));
        fs::create_dir_all(&test_dir).map_err(|e| Error::io(&test_dir, e))?;
        write_file(&test_dir.join("program.py"), &test.program_source)?;
        write_file(
            &test_dir.join("test.json"),
            &serde_json::to_string_pretty(test)?,
        )?;
        write_file(
            &test_dir.join("execution.json"),
            &serde_json::to_string_pretty(execution)?,
        )?;
        if let Some(v) = verdict {
            write_file(
                &test_dir.join("verdict.json"),
                &serde_json::to_string_pretty(v)?,
            )?;
            crate::validate::append_verdict(&dir.join("verdicts.jsonl"), v)?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs a whole campaign for one pattern and returns its final state.
pub fn run_campaign(
    pattern: &ContextAwareBugPattern,
    issue: &IssueRecord,
    index: &dyn ApiIndex,
    gateway: &Gateway,
    harness: &dyn Harness,
    validator: &dyn SelfValidator,
    config: CampaignConfig,
) -> Result<CampaignState> {
    let campaign = Campaign::new(issue, index, gateway, harness, validator, config);
    let state = campaign.start(pattern)?;
    campaign.run(state)
}
