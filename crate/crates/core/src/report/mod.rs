//! Campaign snapshots, finding deduplication and report emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{IssueRecord, IssueRef};
use crate::error::{Error, Result};
use crate::fuzz::{CampaignConfig, CampaignState, Finding};
use crate::harness::format_trace;
use crate::jsonl;
use crate::llm::{sha256_hex, CostLedger};
use crate::pattern::BugCategory;
use crate::validate::IrBugType;

/// Where a snapshot's recorded inputs live, so a resume can replay them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRefs {
    pub cassette: Option<PathBuf>,
    pub harness_transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSnapshot {
    pub version: String,
    pub config: CampaignConfig,
    pub issue: IssueRecord,
    pub refs: SnapshotRefs,
    pub state: CampaignState,
}

impl CampaignSnapshot {
    pub const VERSION: &'static str = "xferfuzz-campaign/1";
    pub const FILE_NAME: &'static str = "campaign.json";

    pub fn new(
        config: &CampaignConfig,
        issue: &IssueRecord,
        state: &CampaignState,
        refs: &SnapshotRefs,
    ) -> Self {
        CampaignSnapshot {
            version: Self::VERSION.to_string(),
            config: config.clone(),
            issue: issue.clone(),
            refs: refs.clone(),
            state: state.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Loads a snapshot, refusing other versions before reading the body.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.line(), e))?;
        let found = value
            .get("version")
            .and_then(|v| v.as_str())
            .unwrap_or("<none>");
        if found != Self::VERSION {
            return Err(Error::SnapshotVersion {
                found: found.to_string(),
                expected: Self::VERSION.to_string(),
            });
        }
        let snapshot: CampaignSnapshot =
            serde_json::from_value(value).map_err(|e| Error::malformed(path, 0, e))?;
        snapshot
            .state
            .check()
            .map_err(|m| Error::malformed(path, 0, format!("inconsistent state: {m}")))?;
        Ok(snapshot)
    }
}

/// Oracle families used to tag findings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    CrashDetection,
    ValueConformance,
    ErrorMessageAnalysis,
    SpecialValueDetection,
    DeviceConsistency,
    EagerCompileConsistency,
    EagerJitConsistency,
}

impl OracleKind {
    pub fn label(self) -> &'static str {
        match self {
            OracleKind::CrashDetection => "Crash Detection",
            OracleKind::ValueConformance => "Value Conformance",
            OracleKind::ErrorMessageAnalysis => "Error Message Analysis",
            OracleKind::SpecialValueDetection => "Special Value Detection",
            OracleKind::DeviceConsistency => "Device Consistency",
            OracleKind::EagerCompileConsistency => "Eager/Compile Consistency",
            OracleKind::EagerJitConsistency => "Eager/JIT Consistency",
        }
    }
}

/// Tags a finding with its oracle family: the IR type decides when it
/// names an environment comparison or a crash, otherwise the oracle text.
pub fn oracle_kind(finding: &Finding) -> OracleKind {
    match (finding.verdict.transferred_type, finding.bug_category) {
        (Some(IrBugType::ExecutionCrash), _) | (_, BugCategory::Crash) => {
            return OracleKind::CrashDetection
        }
        (Some(IrBugType::DeviceInconsistency), _) | (None, BugCategory::CpuVsGpu) => {
            return OracleKind::DeviceConsistency
        }
        (Some(IrBugType::CompileEagerMismatch), _) | (None, BugCategory::EagerVsCompiled) => {
            return OracleKind::EagerCompileConsistency
        }
        (Some(IrBugType::JitEagerMismatch), _) | (None, BugCategory::EagerVsJit) => {
            return OracleKind::EagerJitConsistency
        }
        _ => {}
    }
    let text = format!(
        "{}\n{}",
        finding.test.adapted_oracle, finding.test.program_source
    )
    .to_ascii_lowercase();
    if ["isnan", "isinf", "isfinite", " nan", " inf"]
        .iter()
        .any(|k| text.contains(k))
    {
        OracleKind::SpecialValueDetection
    } else if [
        "error message",
        "str(e)",
        "exception message",
        "warning message",
    ]
    .iter()
    .any(|k| text.contains(k))
    {
        OracleKind::ErrorMessageAnalysis
    } else {
        OracleKind::ValueConformance
    }
}

/// One deduplicated, reportable finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingRecord {
    pub schema: u32,
    pub source_issue: IssueRef,
    pub pattern_bug_api: String,
    /// More than one API for interaction bugs.
    pub target_apis: Vec<String>,
    pub bug_category: BugCategory,
    pub program_source: String,
    /// `<campaign dir>/verdicts.jsonl#<target api>`.
    pub verdict_ref: String,
    pub trace_digest: String,
    pub oracle_kind: OracleKind,
}

impl FindingRecord {
    pub const SCHEMA: u32 = 1;

    pub fn from_finding(finding: &Finding, pattern_bug_api: &str, campaign: &str) -> Self {
        FindingRecord {
            schema: Self::SCHEMA,
            source_issue: finding.source_issue.clone(),
            pattern_bug_api: pattern_bug_api.to_string(),
            target_apis: vec![finding.target_api.clone()],
            bug_category: finding.bug_category,
            program_source: finding.test.program_source.clone(),
            verdict_ref: format!("{campaign}/verdicts.jsonl#{}", finding.target_api),
            trace_digest: sha256_hex(&format_trace(&finding.trace)),
            oracle_kind: oracle_kind(finding),
        }
    }

    fn key(&self) -> (IssueRef, BTreeSet<String>, BugCategory) {
        (
            self.source_issue.clone(),
            self.target_apis.iter().cloned().collect(),
            self.bug_category,
        )
    }
}

/// Keeps the first finding per (source issue, target API set, category).
pub fn dedup_findings(findings: Vec<FindingRecord>) -> Vec<FindingRecord> {
    let mut seen = BTreeSet::new();
    findings
        .into_iter()
        .filter(|f| seen.insert(f.key()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportSummary {
    pub campaigns: usize,
    pub tests: usize,
    pub findings: Vec<FindingRecord>,
    pub category_counts: BTreeMap<BugCategory, usize>,
    pub oracle_counts: BTreeMap<OracleKind, usize>,
    /// Per-file problems; the report covers everything else.
    pub problems: Vec<String>,
}

/// Campaign directories under `out`: `out` itself if it holds a snapshot,
/// plus every `out/campaigns/*` that does.
pub fn campaign_dirs(out: &Path) -> Vec<PathBuf> {
    let mut dirs = Vec::new();
    if out.join(CampaignSnapshot::FILE_NAME).exists() {
        dirs.push(out.to_path_buf());
    }
    if let Ok(entries) = fs::read_dir(out.join("campaigns")) {
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(CampaignSnapshot::FILE_NAME).exists())
            .collect();
        found.sort();
        dirs.extend(found);
    }
    dirs
}

/// Writes findings.jsonl and report.md into `out` from the campaign
/// snapshots found there.
pub fn emit_report(out: &Path) -> Result<ReportSummary> {
    let mut summary = ReportSummary::default();
    let mut records = Vec::new();
    for dir in campaign_dirs(out) {
        let path = dir.join(CampaignSnapshot::FILE_NAME);
        match CampaignSnapshot::load(&path) {
            Ok(s) => {
                summary.campaigns += 1;
                summary.tests += s.state.log.len();
                let name = dir
                    .strip_prefix(out)
                    .ok()
                    .map(|p| p.display().to_string())
                    .filter(|p| !p.is_empty())
                    .unwrap_or_else(|| ".".to_string());
                for f in &s.state.findings {
                    if f.verdict.r#final {
                        records.push(FindingRecord::from_finding(
                            f,
                            &s.state.pattern.bug_api,
                            &name,
                        ));
                    } else {
                        summary.problems.push(format!(
                            "{}: finding on {} lacks a passing verdict",
                            path.display(),
                            f.target_api
                        ));
                    }
                }
            }
            Err(e) => summary.problems.push(format!("{}: {e}", path.display())),
        }
    }
    summary.findings = dedup_findings(records);
    for f in &summary.findings {
        *summary.category_counts.entry(f.bug_category).or_default() += 1;
        *summary.oracle_counts.entry(f.oracle_kind).or_default() += 1;
    }
    jsonl::write(&out.join("findings.jsonl"), &summary.findings)?;

    let ledger = load_ledger(&out.join("ledger.json"), &mut summary.problems);
    let md = render_markdown(&summary, ledger.as_ref());
    let path = out.join("report.md");
    fs::write(&path, md).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

fn load_ledger(path: &Path, problems: &mut Vec<String>) -> Option<CostLedger> {
    let text = fs::read_to_string(path).ok()?;
    match serde_json::from_str::<CostLedger>(&text) {
        Ok(l) if l.is_consistent() => Some(l),
        Ok(_) => {
            problems.push(format!(
                "{}: component totals disagree with entries",
                path.display()
            ));
            None
        }
        Err(e) => {
            problems.push(format!("{}: {e}", path.display()));
            None
        }
    }
}

pub fn render_markdown(summary: &ReportSummary, ledger: Option<&CostLedger>) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "<!-- xferfuzz report v1 -->");
    let _ = writeln!(md, "# Transfer fuzzing report\n");
    let _ = writeln!(
        md,
        "Campaigns: {}. Tests executed: {}. Findings after deduplication: {}.\n",
        summary.campaigns,
        summary.tests,
        summary.findings.len()
    );

    let _ = writeln!(md, "## Findings by category\n");
    let _ = writeln!(md, "| Category | Count |\n|---|---|");
    for c in BugCategory::ALL {
        let _ = writeln!(
            md,
            "| {} | {} |",
            c,
            summary.category_counts.get(&c).copied().unwrap_or(0)
        );
    }

    let _ = writeln!(md, "\n## Oracle kinds\n");
    let _ = writeln!(md, "| Oracle kind | Count |\n|---|---|");
    for (k, n) in &summary.oracle_counts {
        let _ = writeln!(md, "| {} | {} |", k.label(), n);
    }

    let _ = writeln!(md, "\n## Findings\n");
    if summary.findings.is_empty() {
        let _ = writeln!(md, "No findings.");
    } else {
        let _ = writeln!(md, "| # | Bug Type | Bug API | Source Issue | Transfer Path | Oracle |\n|---|---|---|---|---|---|");
        for (i, f) in summary.findings.iter().enumerate() {
            let apis = f.target_apis.join(", ");
            let _ = writeln!(
                md,
                "| {} | {} | `{}` | {} | {} -> `{}` -> `{}` | {} |",
                i + 1,
                f.bug_category,
                apis,
                f.source_issue,
                f.source_issue,
                f.pattern_bug_api,
                apis,
                f.oracle_kind.label()
            );
        }
    }

    if let Some(ledger) = ledger {
        let _ = writeln!(md, "\n## LLM cost\n");
        let _ = writeln!(md, "| Component | Cost |\n|---|---|");
        for (component, cost) in ledger.component_totals() {
            let _ = writeln!(md, "| {component} | {cost} |");
        }
        let _ = writeln!(md, "| Total | {} |", ledger.grand_total());
    }

    if !summary.problems.is_empty() {
        let _ = writeln!(md, "\n## Problems\n");
        for p in &summary.problems {
            let _ = writeln!(md, "- {p}");
        }
    }
    md
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(issue: u64, api: &str, category: BugCategory) -> FindingRecord {
        FindingRecord {
            schema: 1,
            source_issue: IssueRef::new("r", issue),
            pattern_bug_api: "p".into(),
            target_apis: vec![api.into()],
            bug_category: category,
            program_source: String::new(),
            verdict_ref: String::new(),
            trace_digest: String::new(),
            oracle_kind: OracleKind::ValueConformance,
        }
    }

    #[test]
    fn dedup_keeps_first_per_key() {
        let list = vec![
            record(1, "a", BugCategory::WrongOutputs),
            record(1, "a", BugCategory::WrongOutputs),
            record(1, "a", BugCategory::Crash),
            record(2, "a", BugCategory::WrongOutputs),
            record(1, "b", BugCategory::WrongOutputs),
            record(2, "a", BugCategory::WrongOutputs),
            record(3, "c", BugCategory::WrongGradient),
        ];
        let out = dedup_findings(list);
        assert_eq!(out.len(), 5);
        assert_eq!(out[1].bug_category, BugCategory::Crash);
    }

    #[test]
    fn api_set_order_does_not_matter() {
        let mut a = record(1, "x", BugCategory::WrongOutputs);
        a.target_apis = vec!["x".into(), "y".into()];
        let mut b = a.clone();
        b.target_apis = vec!["y".into(), "x".into()];
        assert_eq!(dedup_findings(vec![a, b]).len(), 1);
    }

    #[test]
    fn empty_report_has_zero_table() {
        let dir = tempfile::tempdir().unwrap();
        let s = emit_report(dir.path()).unwrap();
        assert_eq!(s.campaigns, 0);
        let md = fs::read_to_string(dir.path().join("report.md")).unwrap();
        assert!(md.contains("| Wrong Gradient | 0 |"));
        assert!(md.contains("No findings."));
        assert_eq!(
            fs::read_to_string(dir.path().join("findings.jsonl")).unwrap(),
            ""
        );
    }
}
