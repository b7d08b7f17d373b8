//! Fixtures shared by the integration tests: a scripted LLM provider and a
//! stub target library that doubles as a harness.

#![allow(dead_code)]

pub mod scenarios;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use xferfuzz_core::corpus::{Comment, IssueRef, PullRequestRecord};
use xferfuzz_core::harness::{Action, HarnessRequest, HarnessResponse, SiteKind};
use xferfuzz_core::llm::{Cassette, ChatReply, EmbeddingReply, Provider, ProviderError};
use xferfuzz_core::{
    ApiRecord, BugCategory, ContextAwareBugPattern, ExecutionResult, Gateway, Harness, IssueRecord,
    LlmRequest, Mode, TemplateId, TraceEntry,
};

type ChatFn = dyn Fn(&LlmRequest) -> String + Send + Sync;
type EmbedFn = dyn Fn(&str) -> Vec<f64> + Send + Sync;

/// Answers chat requests with a closure and embeddings with another.
pub struct ScriptedProvider {
    chat: Box<ChatFn>,
    embed: Box<EmbedFn>,
}

impl ScriptedProvider {
    pub fn new(
        chat: impl Fn(&LlmRequest) -> String + Send + Sync + 'static,
        embed: impl Fn(&str) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        ScriptedProvider {
            chat: Box::new(chat),
            embed: Box::new(embed),
        }
    }

    pub fn chat_only(chat: impl Fn(&LlmRequest) -> String + Send + Sync + 'static) -> Self {
        Self::new(chat, |_| panic!("unexpected embedding request"))
    }
}

impl Provider for ScriptedProvider {
    fn chat(&self, request: &LlmRequest) -> Result<ChatReply, ProviderError> {
        let text = (self.chat)(request);
        Ok(ChatReply {
            prompt_tokens: request.rendered_prompt.len() as u64 / 4 + 1,
            completion_tokens: text.len() as u64 / 4 + 1,
            text,
        })
    }

    fn embed(
        &self,
        _model_id: &str,
        texts: &[String],
    ) -> Result<Vec<EmbeddingReply>, ProviderError> {
        Ok(texts
            .iter()
            .map(|t| EmbeddingReply {
                values: (self.embed)(t),
                prompt_tokens: t.len() as u64 / 4 + 1,
            })
            .collect())
    }
}

pub fn prices() -> BTreeMap<String, xferfuzz_core::llm::Pricing> {
    xferfuzz_core::config::Config::default().prices().unwrap()
}

pub fn recording_gateway(cassette: &Path, provider: ScriptedProvider) -> Gateway {
    Gateway::builder(Mode::Record)
        .provider(Arc::new(provider))
        .cassette(Cassette::open_for_recording(cassette).unwrap())
        .prices(prices())
        .build()
        .unwrap()
}

pub fn live_gateway(provider: ScriptedProvider) -> Gateway {
    Gateway::builder(Mode::Live)
        .provider(Arc::new(provider))
        .prices(prices())
        .build()
        .unwrap()
}

/// A provider-less gateway over a recorded cassette.
pub fn replay_gateway(cassette: &Path) -> Gateway {
    Gateway::builder(Mode::Replay)
        .cassette(Cassette::load(cassette).unwrap())
        .prices(prices())
        .build()
        .unwrap()
}

/// Text after `label` up to the end of its line.
pub fn after<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    let start = text.find(label)? + label.len();
    Some(text[start..].lines().next().unwrap_or("").trim())
}

pub fn fields(pairs: &[(&str, &str)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("@@ {k} @@\n{v}\n"))
        .collect()
}

pub fn verdict(yes: bool) -> String {
    format!(
        "Reasoning omitted.\nVERDICT: {}",
        if yes { "YES" } else { "NO" }
    )
}

// ---------------------------------------------------------------------------
// Stub library

pub const ANCHOR: &str = "stublib.clamp";
pub const SILENT_BUG: &str = "stublib.clip";
pub const CRASH_BUG: &str = "stublib.fmod";

/// A module tree of elementwise stubs with fixed 4-d embeddings, one silent
/// wrong-output bug and one native crash.
pub struct StubLibrary {
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl StubLibrary {
    pub fn new() -> Self {
        use std::f64::consts::PI;
        let mut v = BTreeMap::new();
        let mut put = |name: &str, x: [f64; 4]| {
            v.insert(format!("stublib.{name}"), x.to_vec());
        };
        put("clamp", [1.0, 0.0, 0.0, 0.0]);
        let ring = [
            "clip",
            "clamp_min",
            "clamp_max",
            "hardtanh",
            "relu6",
            "threshold",
            "where",
            "minimum",
            "maximum",
            "fmin",
        ];
        for (i, n) in ring.iter().enumerate() {
            let r = 0.100 + 0.001 * i as f64;
            let a = 2.0 * PI * i as f64 / 10.0;
            put(n, [1.0, r * a.cos(), r * a.sin(), 0.0]);
        }
        let decoys = [
            "isclose", "allclose", "equal", "eq", "ne", "lt", "le", "gt", "ge", "sort",
        ];
        for (i, n) in decoys.iter().enumerate() {
            let r = 0.110 + 0.001 * i as f64;
            put(n, [1.0, 0.0, 0.0, if i % 2 == 0 { r } else { -r }]);
        }
        let cluster = [
            "round",
            "trunc",
            "fmod",
            "floor",
            "ceil",
            "sign",
            "abs",
            "frac",
            "fix",
            "nan_to_num",
            "sgn",
            "signbit",
        ];
        for (i, n) in cluster.iter().enumerate() {
            let side = if i % 2 == 1 { 1.0 } else { -1.0 };
            put(n, [1.0, 0.125 + 0.004 * i as f64, 0.0, 0.010 * side]);
        }
        let far = [
            "remainder",
            "div",
            "true_divide",
            "floor_divide",
            "mul",
            "add",
            "sub",
            "pow",
        ];
        for (i, n) in far.iter().enumerate() {
            let side = if i % 2 == 1 { 1.0 } else { -1.0 };
            put(n, [1.0, 0.133 + 0.004 * i as f64, 0.0, 0.02 * side]);
        }
        StubLibrary { vectors: v }
    }

    pub fn records(&self) -> Vec<ApiRecord> {
        self.vectors
            .keys()
            .map(|name| {
                let mut r = ApiRecord::new(name);
                r.doc_text = format!("Elementwise stub `{name}`.");
                r
            })
            .collect()
    }

    pub fn embedding_of(&self, text: &str) -> Vec<f64> {
        let name = text.split_whitespace().next().unwrap_or("");
        self.vectors
            .get(name)
            .unwrap_or_else(|| panic!("no fixture vector for `{name}`"))
            .clone()
    }

    fn execute(&self, program: &str) -> ExecutionResult {
        let target = called_api(program);
        let x = TraceEntry::new(SiteKind::Assignment, "x", "tensor([ 1., -2.,  3.])");
        let call = TraceEntry::new(
            SiteKind::CallChainStep,
            format!("{target}(x)"),
            "tensor([1., 0., 1.])",
        );
        match target.as_str() {
            SILENT_BUG | ANCHOR => ExecutionResult::exited(0, "BUG FOUND\n").with_trace(vec![
                x,
                call,
                TraceEntry::new(SiteKind::Assignment, "out", "tensor([])"),
            ]),
            CRASH_BUG => ExecutionResult::crashed("SIGFPE").with_trace(vec![x]),
            _ => ExecutionResult::exited(0, "ok\n").with_trace(vec![
                x,
                call,
                TraceEntry::new(SiteKind::Assignment, "out", "tensor([1., 0., 1.])"),
            ]),
        }
    }
}

impl Harness for StubLibrary {
    fn call(&self, request: &HarnessRequest) -> xferfuzz_core::Result<HarnessResponse> {
        let program = request.program.as_deref().unwrap_or("");
        Ok(match request.action {
            Action::Catalog => HarnessResponse {
                apis: self.records(),
                ..HarnessResponse::ok()
            },
            Action::Instrument => HarnessResponse {
                program: Some(format!("# traced\n{program}")),
                ..HarnessResponse::ok()
            },
            Action::Execute => HarnessResponse::from_execution(&self.execute(program)),
        })
    }
}

/// The API in the `out = stublib.NAME(x)` line of a stub program.
pub fn called_api(program: &str) -> String {
    program
        .lines()
        .find_map(|l| l.trim().strip_prefix("out = "))
        .and_then(|rhs| rhs.split('(').next())
        .unwrap_or("")
        .to_string()
}

pub fn stub_program(api: &str) -> String {
    format!(
        "import stublib\nx = stublib.tensor([1.0, -2.0, 3.0])\nout = {api}(x)\nif not stublib.matches_reference(out):\n    print(\"BUG FOUND\")\n"
    )
}

pub fn stub_issue() -> IssueRecord {
    IssueRecord {
        repo: "stub/stublib".into(),
        number: 7,
        title: "clamp returns an empty tensor for a non-empty input".into(),
        body: format!("```python\n{}```", stub_program(ANCHOR)),
        labels: vec!["bug".into()],
        comments: vec![Comment {
            author: "maintainer".into(),
            text: "Confirmed, fixed in #8.".into(),
        }],
        linked_pr_numbers: vec![8],
    }
}

pub fn stub_pr() -> PullRequestRecord {
    PullRequestRecord {
        repo: "stub/stublib".into(),
        number: 8,
        title: "Fix clamp shape handling".into(),
        description: "Fixes #7".into(),
        diff_text:
            "--- a/stublib/clamp.py\n+++ b/stublib/clamp.py\n-    return out[:0]\n+    return out\n"
                .into(),
        changed_files: vec!["stublib/clamp.py".into()],
    }
}

pub fn stub_pattern() -> ContextAwareBugPattern {
    ContextAwareBugPattern {
        source_issue: IssueRef::new("stub/stublib", 7),
        bug_api: ANCHOR.into(),
        triggering_context: "a non-empty float tensor with mixed signs".into(),
        oracle_design: "compare the output with an elementwise reference".into(),
        expected_behavior: "output has the input's shape".into(),
        actual_behavior: "output is empty".into(),
        repro_program: stub_program(ANCHOR),
        bug_category: BugCategory::WrongOutputs,
    }
}

/// Chat script for campaigns over the stub library: every validation
/// question is answered in favour of the candidate.
pub fn stub_chat(req: &LlmRequest) -> String {
    let p = &req.rendered_prompt;
    match req.template_id {
        TemplateId::PatternExtraction => {
            let pat = stub_pattern();
            let category = pat.bug_category.label();
            fields(&[
                ("bug_api", &pat.bug_api),
                ("bug_category", category),
                ("triggering_context", &pat.triggering_context),
                ("expected_behavior", &pat.expected_behavior),
                ("actual_behavior", &pat.actual_behavior),
                ("oracle_design", &pat.oracle_design),
                ("repro_program", &pat.repro_program),
            ])
        }
        TemplateId::FunctionalDescription => {
            let name = after(p, "API: ").unwrap();
            format!("{name} maps each element of a floating point tensor to a new value.")
        }
        TemplateId::BugTransfer => {
            let target = after(p, "Target API: `").unwrap().trim_end_matches('`');
            fields(&[
                ("rationale", "both APIs are elementwise"),
                (
                    "adapted_context",
                    &format!("a mixed-sign tensor passed to {target}"),
                ),
                (
                    "adapted_oracle",
                    &format!("{target} output matches the reference"),
                ),
                ("program", &stub_program(target)),
            ])
        }
        TemplateId::SameBugType => {
            "ORIGINAL_TYPE: Functional_Defect\nTRANSFERRED_TYPE: Functional_Defect".into()
        }
        TemplateId::CriteriaExtraction => fields(&[(
            "criteria",
            "An elementwise API must return a tensor with the input's shape.",
        )]),
        TemplateId::RealBug => {
            "The output is empty although the input is not.\nVERDICT: YES".into()
        }
        TemplateId::DebateChallenge => {
            "An empty output could be intended, but nothing documents it.".into()
        }
        TemplateId::DebateSummary => {
            "The behavior contradicts the criteria.\nFALSE_POSITIVE: NO".into()
        }
        _ => verdict(true),
    }
}

pub fn stub_provider() -> ScriptedProvider {
    let lib = StubLibrary::new();
    ScriptedProvider::new(stub_chat, move |t| lib.embedding_of(t))
}

/// The hand-simulated order in which the campaign over the stub library
/// must test APIs with window 10 and expansion 10.
///
/// Round 1 takes the ten nearest APIs to clamp (the ring, clip first).
/// clip fires. Round 2 takes the next ten (the decoys) plus clip's ten
/// nearest, none tested yet. fmod crashes. Round 3 takes the last ten
/// queue entries; every fmod neighbour is already tested or in the batch.
/// Nothing fires in round 3, so the loop ends.
pub const REFERENCE_TRACE: [(u32, &str); 40] = [
    (1, "stublib.clip"),
    (1, "stublib.clamp_min"),
    (1, "stublib.clamp_max"),
    (1, "stublib.hardtanh"),
    (1, "stublib.relu6"),
    (1, "stublib.threshold"),
    (1, "stublib.where"),
    (1, "stublib.minimum"),
    (1, "stublib.maximum"),
    (1, "stublib.fmin"),
    (2, "stublib.isclose"),
    (2, "stublib.allclose"),
    (2, "stublib.equal"),
    (2, "stublib.eq"),
    (2, "stublib.ne"),
    (2, "stublib.lt"),
    (2, "stublib.le"),
    (2, "stublib.gt"),
    (2, "stublib.ge"),
    (2, "stublib.sort"),
    (2, "stublib.round"),
    (2, "stublib.trunc"),
    (2, "stublib.fmod"),
    (2, "stublib.floor"),
    (2, "stublib.remainder"),
    (2, "stublib.div"),
    (2, "stublib.ceil"),
    (2, "stublib.true_divide"),
    (2, "stublib.sign"),
    (2, "stublib.floor_divide"),
    (3, "stublib.abs"),
    (3, "stublib.mul"),
    (3, "stublib.frac"),
    (3, "stublib.add"),
    (3, "stublib.fix"),
    (3, "stublib.sub"),
    (3, "stublib.nan_to_num"),
    (3, "stublib.pow"),
    (3, "stublib.sgn"),
    (3, "stublib.signbit"),
];

/// Output of one pass over the stub library.
pub struct StubRun {
    pub state: xferfuzz_core::CampaignState,
    pub ledger: xferfuzz_core::CostLedger,
}

/// Runs catalog, describe, embed, extract and the campaign over the stub
/// library. With `record` the scripted provider and the stub harness are
/// called and their exchanges written to `dir`; otherwise only the
/// cassette and harness transcript in `dir` are read.
pub fn stub_pipeline(dir: &Path, record: bool) -> StubRun {
    use xferfuzz_core::harness::{RecordingHarness, TranscriptHarness};
    use xferfuzz_core::matcher::{build_catalog, describe_api, embed_descriptions, Matcher};
    use xferfuzz_core::pattern::extract_pattern;
    use xferfuzz_core::validate::{Validator, ValidatorConfig};
    use xferfuzz_core::{fuzz, CampaignConfig};

    let cassette = dir.join("cassette.jsonl");
    let transcript = dir.join("harness.jsonl");
    let (gateway, harness): (Gateway, Box<dyn Harness>) = if record {
        (
            recording_gateway(&cassette, stub_provider()),
            Box::new(RecordingHarness::new(StubLibrary::new(), &transcript)),
        )
    } else {
        (
            replay_gateway(&cassette),
            Box::new(TranscriptHarness::load(&transcript).unwrap()),
        )
    };

    let catalog = build_catalog(harness.as_ref(), "stublib").unwrap();
    let descriptions: Vec<_> = catalog
        .records()
        .iter()
        .map(|r| describe_api(r, &gateway).unwrap())
        .collect();
    let db = embed_descriptions(&descriptions, &gateway, 16).unwrap();
    let matcher = Matcher::new(catalog, db);
    let issue = stub_issue();
    let pattern = extract_pattern(&issue, &stub_pr(), &gateway).unwrap();
    let validator = Validator::new(&gateway, ValidatorConfig::default());
    let config = CampaignConfig {
        window_size: 10,
        ..CampaignConfig::default()
    };
    let state = fuzz::run_campaign(
        &pattern,
        &issue,
        &matcher,
        &gateway,
        harness.as_ref(),
        &validator,
        config,
    )
    .unwrap();
    StubRun {
        state,
        ledger: gateway.ledger(),
    }
}

/// Components rebuilt offline from a directory written by
/// `stub_pipeline(dir, true)`, for driving campaigns by hand.
pub struct StubParts {
    pub gateway: Gateway,
    pub harness: xferfuzz_core::harness::TranscriptHarness,
    pub matcher: xferfuzz_core::matcher::Matcher,
    pub issue: IssueRecord,
    pub pattern: ContextAwareBugPattern,
}

pub fn stub_parts(dir: &Path) -> StubParts {
    use xferfuzz_core::harness::TranscriptHarness;
    use xferfuzz_core::matcher::{build_catalog, describe_api, embed_descriptions, Matcher};
    use xferfuzz_core::pattern::extract_pattern;

    let gateway = replay_gateway(&dir.join("cassette.jsonl"));
    let harness = TranscriptHarness::load(&dir.join("harness.jsonl")).unwrap();
    let catalog = build_catalog(&harness, "stublib").unwrap();
    let descriptions: Vec<_> = catalog
        .records()
        .iter()
        .map(|r| describe_api(r, &gateway).unwrap())
        .collect();
    let db = embed_descriptions(&descriptions, &gateway, 16).unwrap();
    let issue = stub_issue();
    let pattern = extract_pattern(&issue, &stub_pr(), &gateway).unwrap();
    StubParts {
        gateway,
        harness,
        matcher: Matcher::new(catalog, db),
        issue,
        pattern,
    }
}
