//! Context-aware bug patterns distilled from fixed issues.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{IssueRecord, IssueRef, PullRequestRecord};
use crate::error::{Error, Result};
use crate::llm::{Gateway, TemplateId};
use crate::{fields, jsonl};

/// Longest diff excerpt placed in the extraction prompt, in bytes.
pub const MAX_DIFF_CHARS: usize = 24_000;

/// Bug categories from the empirical study. Nine silent kinds plus crashes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugCategory {
    EagerVsCompiled,
    EagerVsJit,
    CpuVsGpu,
    PerformanceDegradation,
    WrongSaveReload,
    WrongDisplayedMessage,
    WrongGradient,
    WrongOutputs,
    FunctionalityNotWorking,
    Crash,
}

impl BugCategory {
    pub const ALL: [BugCategory; 10] = [
        BugCategory::EagerVsCompiled,
        BugCategory::EagerVsJit,
        BugCategory::CpuVsGpu,
        BugCategory::PerformanceDegradation,
        BugCategory::WrongSaveReload,
        BugCategory::WrongDisplayedMessage,
        BugCategory::WrongGradient,
        BugCategory::WrongOutputs,
        BugCategory::FunctionalityNotWorking,
        BugCategory::Crash,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BugCategory::EagerVsCompiled => "Eager vs Compiled",
            BugCategory::EagerVsJit => "Eager vs JIT",
            BugCategory::CpuVsGpu => "CPU vs GPU",
            BugCategory::PerformanceDegradation => "Performance Degradation",
            BugCategory::WrongSaveReload => "Wrong Save/Reload",
            BugCategory::WrongDisplayedMessage => "Wrong Displayed Message",
            BugCategory::WrongGradient => "Wrong Gradient",
            BugCategory::WrongOutputs => "Wrong Outputs",
            BugCategory::FunctionalityNotWorking => "Functionality Not Working as Expected",
            BugCategory::Crash => "Crash",
        }
    }

    pub fn is_silent(self) -> bool {
        self != BugCategory::Crash
    }
}

impl fmt::Display for BugCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Free-text labels accepted for each category, compared after [`squash`].
const ALIASES: &[(&str, BugCategory)] = &[
    ("eagervscompiled", BugCategory::EagerVsCompiled),
    ("eagervscompile", BugCategory::EagerVsCompiled),
    ("compiledvseager", BugCategory::EagerVsCompiled),
    ("eagercompiledinconsistency", BugCategory::EagerVsCompiled),
    ("torchcompile", BugCategory::EagerVsCompiled),
    ("eagervsjit", BugCategory::EagerVsJit),
    ("jitvseager", BugCategory::EagerVsJit),
    ("eagerjitinconsistency", BugCategory::EagerVsJit),
    ("cpuvsgpu", BugCategory::CpuVsGpu),
    ("gpuvscpu", BugCategory::CpuVsGpu),
    ("cpuvscuda", BugCategory::CpuVsGpu),
    ("cpugpuinconsistency", BugCategory::CpuVsGpu),
    ("deviceinconsistency", BugCategory::CpuVsGpu),
    (
        "performancedegradation",
        BugCategory::PerformanceDegradation,
    ),
    ("performance", BugCategory::PerformanceDegradation),
    ("performanceregression", BugCategory::PerformanceDegradation),
    ("wrongsavereload", BugCategory::WrongSaveReload),
    ("wrongsaveload", BugCategory::WrongSaveReload),
    ("savereload", BugCategory::WrongSaveReload),
    ("serialization", BugCategory::WrongSaveReload),
    ("wrongdisplayedmessage", BugCategory::WrongDisplayedMessage),
    ("wrongmessage", BugCategory::WrongDisplayedMessage),
    ("wrongerrormessage", BugCategory::WrongDisplayedMessage),
    ("wronggradient", BugCategory::WrongGradient),
    ("incorrectgradient", BugCategory::WrongGradient),
    ("gradient", BugCategory::WrongGradient),
    ("wrongoutputs", BugCategory::WrongOutputs),
    ("wrongoutput", BugCategory::WrongOutputs),
    ("incorrectoutput", BugCategory::WrongOutputs),
    ("wrongresult", BugCategory::WrongOutputs),
    (
        "functionalitynotworkingasexpected",
        BugCategory::FunctionalityNotWorking,
    ),
    (
        "functionalitynotworking",
        BugCategory::FunctionalityNotWorking,
    ),
    ("functionaldefect", BugCategory::FunctionalityNotWorking),
    ("crash", BugCategory::Crash),
    ("executioncrash", BugCategory::Crash),
    ("segfault", BugCategory::Crash),
];

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl FromStr for BugCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = squash(s);
        ALIASES
            .iter()
            .find(|(alias, _)| *alias == key)
            .map(|(_, c)| *c)
            .ok_or_else(|| Error::UnknownCategory(s.trim().to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextAwareBugPattern {
    pub source_issue: IssueRef,
    pub bug_api: String,
    pub triggering_context: String,
    pub oracle_design: String,
    pub expected_behavior: String,
    pub actual_behavior: String,
    pub repro_program: String,
    pub bug_category: BugCategory,
}

const FIELDS: [&str; 7] = [
    "bug_api",
    "bug_category",
    "triggering_context",
    "expected_behavior",
    "actual_behavior",
    "oracle_design",
    "repro_program",
];

impl ContextAwareBugPattern {
    /// Renders the pattern in the same field-block grammar the parser reads.
    pub fn to_response_text(&self) -> String {
        fields::render(&[
            ("bug_api", &self.bug_api),
            ("bug_category", self.bug_category.label()),
            ("triggering_context", &self.triggering_context),
            ("expected_behavior", &self.expected_behavior),
            ("actual_behavior", &self.actual_behavior),
            ("oracle_design", &self.oracle_design),
            ("repro_program", &self.repro_program),
        ])
    }

    /// Compact summary used inside validation prompts.
    pub fn summary(&self) -> String {
        format!(
            "Bug API: {}\nCategory: {}\nTriggering context: {}\nExpected: {}\nActual: {}\nOracle: {}",
            self.bug_api,
            self.bug_category,
            self.triggering_context,
            self.expected_behavior,
            self.actual_behavior,
            self.oracle_design
        )
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("bug_api", &self.bug_api),
            ("triggering_context", &self.triggering_context),
            ("oracle_design", &self.oracle_design),
        ] {
            if v.trim().is_empty() {
                return Err(Error::MissingField(name.into()));
            }
        }
        Ok(())
    }
}

/// Parses an extraction reply. Every field is mandatory; the repro program
/// must at least have balanced delimiters.
pub fn parse_pattern_response(
    text: &str,
    source_issue: IssueRef,
) -> Result<ContextAwareBugPattern> {
    let f = fields::parse(text);
    let get = |name: &str| -> Result<String> {
        f.get(name)
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::MissingField(name.into()))
    };
    for name in FIELDS {
        get(name)?;
    }
    let bug_api = get("bug_api")?.trim_matches('`').to_string();
    let repro_program = f["repro_program"].clone();
    if !fields::delimiters_balanced(&repro_program) {
        return Err(Error::Unparseable {
            template: TemplateId::PatternExtraction.to_string(),
            message: "repro_program has unbalanced delimiters".into(),
        });
    }
    let pattern = ContextAwareBugPattern {
        source_issue,
        bug_api,
        bug_category: get("bug_category")?.parse()?,
        triggering_context: get("triggering_context")?,
        expected_behavior: get("expected_behavior")?,
        actual_behavior: get("actual_behavior")?,
        oracle_design: get("oracle_design")?,
        repro_program,
    };
    pattern.check()?;
    Ok(pattern)
}

fn truncate(text: &str, max: usize) -> String {
    if text.len() <= max {
        return text.to_string();
    }
    let mut end = max;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}\n[... diff truncated ...]", &text[..end])
}

/// Distills one fixed issue and its PR into a pattern.
pub fn extract_pattern(
    issue: &IssueRecord,
    pr: &PullRequestRecord,
    gateway: &Gateway,
) -> Result<ContextAwareBugPattern> {
    let comments = issue
        .comments
        .iter()
        .map(|c| format!("[{}] {}", c.author, c.text))
        .collect::<Vec<_>>()
        .join("\n");
    let comments = if comments.is_empty() {
        "(none)".to_string()
    } else {
        comments
    };
    let number = issue.number.to_string();
    let diff = truncate(&pr.diff_text, MAX_DIFF_CHARS);
    let slots = [
        ("repo", issue.repo.as_str()),
        ("issue_number", number.as_str()),
        ("issue_title", issue.title.as_str()),
        ("issue_body", issue.body.as_str()),
        ("issue_comments", comments.as_str()),
        ("pr_title", pr.title.as_str()),
        ("pr_description", pr.description.as_str()),
        ("pr_diff", diff.as_str()),
    ];
    let source = issue.issue_ref();
    gateway.ask(TemplateId::PatternExtraction, &slots, 0, |text| {
        parse_pattern_response(text, source.clone())
    })
}

/// patterns.jsonl, keyed by source issue.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternStore {
    patterns: BTreeMap<IssueRef, ContextAwareBugPattern>,
}

impl PatternStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut store = PatternStore::new();
        for (line, p) in jsonl::read_or_empty::<ContextAwareBugPattern>(path)? {
            p.check().map_err(|e| Error::malformed(path, line, e))?;
            let key = p.source_issue.clone();
            if store.patterns.insert(key.clone(), p).is_some() {
                return Err(Error::malformed(
                    path,
                    line,
                    Error::DuplicateKey(key.to_string()),
                ));
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write(path, self.patterns.values())
    }

    pub fn upsert(&mut self, pattern: ContextAwareBugPattern) {
        self.patterns.insert(pattern.source_issue.clone(), pattern);
    }

    pub fn get(&self, issue: &IssueRef) -> Option<&ContextAwareBugPattern> {
        self.patterns.get(issue)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ContextAwareBugPattern> {
        self.patterns.values()
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}
