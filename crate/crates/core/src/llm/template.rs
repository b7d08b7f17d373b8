//! Registered prompt templates.
//!
//! Each template is a fixed body with `{{slot}}` placeholders. Rendering is a
//! single left-to-right pass, so slot values may themselves contain braces.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which priced pipeline component a template belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    PatternExtraction,
    ApiMatching,
    Fuzzing,
    SelfValidation,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::PatternExtraction,
        Component::ApiMatching,
        Component::Fuzzing,
        Component::SelfValidation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::PatternExtraction => "pattern_extraction",
            Component::ApiMatching => "api_matching",
            Component::Fuzzing => "fuzzing",
            Component::SelfValidation => "self_validation",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    PatternExtraction,
    FunctionalDescription,
    BugTransfer,
    IssueApiRelevance,
    IssueHasDemo,
    IssueComments,
    ReproComplexity,
    SameBugType,
    RealMismatch,
    SameBugPattern,
    BugFreeVerification,
    CriteriaExtraction,
    RealBug,
    DebateChallenge,
    DebateSummary,
    /// Not a chat template; keys embedding requests in the cassette.
    Embedding,
}

impl TemplateId {
    pub const ALL: [TemplateId; 16] = [
        TemplateId::PatternExtraction,
        TemplateId::FunctionalDescription,
        TemplateId::BugTransfer,
        TemplateId::IssueApiRelevance,
        TemplateId::IssueHasDemo,
        TemplateId::IssueComments,
        TemplateId::ReproComplexity,
        TemplateId::SameBugType,
        TemplateId::RealMismatch,
        TemplateId::SameBugPattern,
        TemplateId::BugFreeVerification,
        TemplateId::CriteriaExtraction,
        TemplateId::RealBug,
        TemplateId::DebateChallenge,
        TemplateId::DebateSummary,
        TemplateId::Embedding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::PatternExtraction => "pattern_extraction",
            TemplateId::FunctionalDescription => "functional_description",
            TemplateId::BugTransfer => "bug_transfer",
            TemplateId::IssueApiRelevance => "issue_api_relevance",
            TemplateId::IssueHasDemo => "issue_has_demo",
            TemplateId::IssueComments => "issue_comments",
            TemplateId::ReproComplexity => "repro_complexity",
            TemplateId::SameBugType => "same_bug_type",
            TemplateId::RealMismatch => "real_mismatch",
            TemplateId::SameBugPattern => "same_bug_pattern",
            TemplateId::BugFreeVerification => "bug_free_verification",
            TemplateId::CriteriaExtraction => "criteria_extraction",
            TemplateId::RealBug => "real_bug",
            TemplateId::DebateChallenge => "debate_challenge",
            TemplateId::DebateSummary => "debate_summary",
            TemplateId::Embedding => "embedding",
        }
    }

    pub fn component(self) -> Component {
        match self {
            TemplateId::PatternExtraction => Component::PatternExtraction,
            TemplateId::FunctionalDescription | TemplateId::Embedding => Component::ApiMatching,
            TemplateId::BugTransfer => Component::Fuzzing,
            _ => Component::SelfValidation,
        }
    }

    /// Validation prompts are pinned to temperature 0.
    pub fn is_validation(self) -> bool {
        self.component() == Component::SelfValidation
    }

    pub fn body(self) -> &'static str {
        match self {
            TemplateId::PatternExtraction => PATTERN_EXTRACTION,
            TemplateId::FunctionalDescription => FUNCTIONAL_DESCRIPTION,
            TemplateId::BugTransfer => BUG_TRANSFER,
            TemplateId::IssueApiRelevance => ISSUE_API_RELEVANCE,
            TemplateId::IssueHasDemo => ISSUE_HAS_DEMO,
            TemplateId::IssueComments => ISSUE_COMMENTS,
            TemplateId::ReproComplexity => REPRO_COMPLEXITY,
            TemplateId::SameBugType => SAME_BUG_TYPE,
            TemplateId::RealMismatch => REAL_MISMATCH,
            TemplateId::SameBugPattern => SAME_BUG_PATTERN,
            TemplateId::BugFreeVerification => BUG_FREE_VERIFICATION,
            TemplateId::CriteriaExtraction => CRITERIA_EXTRACTION,
            TemplateId::RealBug => REAL_BUG,
            TemplateId::DebateChallenge => DEBATE_CHALLENGE,
            TemplateId::DebateSummary => DEBATE_SUMMARY,
            TemplateId::Embedding => "{{text}}",
        }
    }

    /// Slot names in order of first appearance.
    pub fn slots(self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for seg in segments(self.body()) {
            if let Segment::Slot(name) = seg {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }

    /// Fills every slot. Missing and unknown slot names are both errors.
    pub fn render(self, values: &[(&str, &str)]) -> Result<String> {
        let map: BTreeMap<&str, &str> = values.iter().copied().collect();
        let slots = self.slots();
        if let Some(unknown) = map.keys().find(|k| !slots.contains(k)) {
            return Err(Error::InvalidRequest(format!(
                "template `{self}` has no slot `{unknown}`"
            )));
        }
        let mut out = String::with_capacity(self.body().len());
        for seg in segments(self.body()) {
            match seg {
                Segment::Text(t) => out.push_str(&with_format_note(t)),
                Segment::Slot(name) => match map.get(name) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(Error::InvalidRequest(format!(
                            "template `{self}` slot `{name}` not provided"
                        )))
                    }
                },
            }
        }
        Ok(out)
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidRequest(format!("unregistered template `{s}`")))
    }
}

enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn segments(body: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let Some(len) = rest[start + 2..].find("}}") else {
            break;
        };
        let name = &rest[start + 2..start + 2 + len];
        if !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') || name.is_empty() {
            out.push(Segment::Text(&rest[..start + 2]));
            rest = &rest[start + 2..];
            continue;
        }
        out.push(Segment::Text(&rest[..start]));
        out.push(Segment::Slot(name));
        rest = &rest[start + 2 + len + 2..];
    }
    out.push(Segment::Text(rest));
    out
}

/// Appended to a prompt when the previous answer did not parse.
pub fn repair_suffix(error: &str) -> String {
    format!(
        "\n\nYour previous answer could not be processed ({error}). \
         Answer again and follow the required output format exactly."
    )
}

const FIELD_FORMAT_NOTE: &str =
    "Each field starts on its own line with a header of the form `@@ field_name @@`; \
the field value is everything up to the next header.";

const PATTERN_EXTRACTION: &str = "You are analyzing a fixed bug in a deep-learning library.

Issue {{repo}}#{{issue_number}}: {{issue_title}}
--- issue body ---
{{issue_body}}
--- discussion ---
{{issue_comments}}
--- fixing pull request: {{pr_title}} ---
{{pr_description}}
--- code changes ---
{{pr_diff}}

Work through the report and the fix:
1. Name the exact public API in which the bug manifests.
2. State the conditions that trigger the bug (inputs, environment, call order).
3. Contrast the expected behavior with the observed behavior.
4. Describe an automated oracle that detects the bug without manual inspection.
5. Classify the bug as one of: Eager vs Compiled, Eager vs JIT, CPU vs GPU, Performance Degradation, Wrong Save/Reload, Wrong Displayed Message, Wrong Gradient, Wrong Outputs, Functionality Not Working as Expected, Crash.
6. Write a self-contained Python program that reproduces the bug from a user's perspective and prints the line BUG FOUND when the oracle fires.

Answer with exactly these fields: bug_api, bug_category, triggering_context, expected_behavior, actual_behavior, oracle_design, repro_program.
FORMAT";

const FUNCTIONAL_DESCRIPTION: &str =
    "Describe what the following API does, independent of any particular use case.

API: {{qualified_name}}
Module: {{module_path}}
Signature: {{signature}}
Documentation:
{{doc_text}}

Cover the kinds and types of the input parameters and the core operation the API performs on them. \
Do not mention example scenarios, users, or applications. Reply with the description only.";

const BUG_TRANSFER: &str = "A known bug was found in `{{bug_api}}`.
Triggering context: {{triggering_context}}
Expected behavior: {{expected_behavior}}
Actual behavior: {{actual_behavior}}
Oracle design: {{oracle_design}}
Reproduction program:
{{repro_program}}

Target API: `{{target_api}}`
Target signature: {{target_signature}}
Target documentation:
{{target_doc}}

Reason step by step:
1. Compare the functional semantics and usage scenarios of the two APIs.
2. Assuming the target API suffers from a similar bug, infer the context that would trigger it and the abnormal behavior it would show.
3. Design an oracle, suited to the target API and this kind of bug, that detects that behavior.
4. Write a complete Python test program combining the triggering context, the call sequence, and the oracle. It must print the line BUG FOUND exactly when the oracle fires.

Answer with exactly these fields: rationale, adapted_context, adapted_oracle, program.
FORMAT";

const ISSUE_API_RELEVANCE: &str = "Does the following issue describe a bug in a specific library API (rather than documentation, build, or usage questions)?

{{issue_text}}

Explain briefly, then finish with a line `VERDICT: YES` or `VERDICT: NO`.";

const ISSUE_HAS_DEMO: &str =
    "Does the following issue include code that reproduces the reported behavior?

{{issue_text}}

Explain briefly, then finish with a line `VERDICT: YES` or `VERDICT: NO`.";

const ISSUE_COMMENTS: &str = "Read the discussion of the following issue. Did the maintainers accept that the reported behavior is a bug? \
Answer NO if developers rejected the claim, called the behavior intended, or closed it as not a bug.

{{issue_text}}

Explain briefly, then finish with a line `VERDICT: YES` or `VERDICT: NO`.";

const REPRO_COMPLEXITY: &str = "Is the reproduction code in the following issue simple enough that the root behavior can be attributed to one API call or a short call sequence?

{{issue_text}}

Explain briefly, then finish with a line `VERDICT: YES` or `VERDICT: NO`.";

const SAME_BUG_TYPE: &str = "Bug types are defined by the following intermediate representation:

{{ir_catalog}}

Original case program:
{{original_program}}
Original case trace:
{{original_trace}}

Transferred case program:
{{transferred_program}}
Transferred case trace:
{{transferred_trace}}

Match each case against the definitions and pick exactly one bug type for each. Finish with two lines:
ORIGINAL_TYPE: <type>
TRANSFERRED_TYPE: <type>";

const REAL_MISMATCH: &str = "The following test compares the same computation across execution environments and reported a mismatch.

Program:
{{program}}
Execution trace:
{{trace}}
Output:
{{execution_output}}

Decide whether the outputs really diverge for identical inputs. Answer NO if the divergence comes from inputs generated separately per environment, unseeded randomness, or tolerances tighter than the dtype allows. \
Finish with a line `VERDICT: YES` or `VERDICT: NO`.";

const SAME_BUG_PATTERN: &str = "Original bug pattern:
{{original_pattern}}
Original reproduction program:
{{original_program}}

Transferred test program:
{{transferred_program}}
Transferred execution trace:
{{transferred_trace}}
Transferred output:
{{execution_output}}

Compare the trigger conditions, the runtime behaviors, and the oracle that actually fired. Do both cases exhibit the same bug pattern? \
Finish with a line `VERDICT: YES` or `VERDICT: NO`.";

const BUG_FREE_VERIFICATION: &str = "Assume `{{target_api}}` is implemented correctly and does not contain the bug this test is looking for.

Oracle: {{adapted_oracle}}
Program:
{{program}}
Execution trace:
{{trace}}
Output:
{{execution_output}}

Under that assumption, could the oracle still fire? If yes, the oracle is unsound. Finish with a line `VERDICT: YES` if the oracle is sound (it would not fire on a correct API), or `VERDICT: NO` if it is unsound.";

const CRITERIA_EXTRACTION: &str = "The following fixed issue concerns `{{bug_api}}`.

{{issue_text}}

Based on the functional characteristics of the API, explain why the observed behavior is a bug rather than expected behavior, and state the specific functional requirement that was violated. \
Answer with one field: criteria.
FORMAT";

const REAL_BUG: &str = "Bug determination criteria taken from a confirmed issue:
{{criteria}}

A transferred test for `{{target_api}}` printed BUG FOUND.
Program:
{{program}}
Execution trace:
{{trace}}
Output:
{{execution_output}}

Explain why the oracle fired. Using the criteria as the reasoning framework, decide whether the behavior of the target API is a real bug rather than a test design flaw or an environmental effect. \
Finish with a line `VERDICT: YES` or `VERDICT: NO`.";

const DEBATE_CHALLENGE: &str = "{{conversation}}

Please challenge this from the opposing viewpoint.";

const DEBATE_SUMMARY: &str = "{{conversation}}

Based on both viewpoints, summarize whether this is a false positive. Finish with a line `FALSE_POSITIVE: YES` or `FALSE_POSITIVE: NO`.";

/// Expands the shared field-format note at the `FORMAT` marker.
fn with_format_note(body: &str) -> String {
    body.replace("\nFORMAT", &format!("\n{FIELD_FORMAT_NOTE}"))
}
