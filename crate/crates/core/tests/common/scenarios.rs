//! Self-validation cases replayed through a cassette.

use xferfuzz_core::corpus::{Comment, IssueRef};
use xferfuzz_core::fuzz::TransferredTest;
use xferfuzz_core::harness::SiteKind;
use xferfuzz_core::validate::{Candidate, Stage, Validator, ValidatorConfig};
use xferfuzz_core::{
    BugCategory, ContextAwareBugPattern, ExecutionResult, IssueRecord, LlmRequest, TemplateId,
    TraceEntry, ValidationVerdict,
};

use super::{fields, recording_gateway, replay_gateway, verdict, ScriptedProvider};

pub struct Scenario {
    pub name: &'static str,
    pub issue: IssueRecord,
    pub pattern: ContextAwareBugPattern,
    pub test: TransferredTest,
    pub execution: ExecutionResult,
    pub chat: fn(&LlmRequest) -> String,
    pub expected_failure: Option<Stage>,
}

fn issue(number: u64, title: &str, body: &str) -> IssueRecord {
    IssueRecord {
        repo: "pytorch/pytorch".into(),
        number,
        title: title.into(),
        body: body.into(),
        labels: vec!["bug".into()],
        comments: vec![Comment {
            author: "dev".into(),
            text: "Confirmed and fixed.".into(),
        }],
        linked_pr_numbers: vec![number + 1],
    }
}

fn fired(trace: Vec<TraceEntry>) -> ExecutionResult {
    ExecutionResult::exited(0, "BUG FOUND\n").with_trace(trace)
}

fn transferred(
    issue: &IssueRecord,
    api: &str,
    context: &str,
    oracle: &str,
    program: &str,
) -> TransferredTest {
    TransferredTest {
        source_issue: issue.issue_ref(),
        target_api: api.into(),
        program_source: program.into(),
        adapted_context: context.into(),
        adapted_oracle: oracle.into(),
        rationale: "similar semantics".into(),
    }
}

/// Original clamp bug: empty input gives a wrongly shaped output. The clip
/// test instead checks an error message, so the patterns differ.
pub fn clamp_vs_clip() -> Scenario {
    let issue = issue(
        1001,
        "torch.clamp on an empty tensor returns the wrong shape",
        "```python\nx = torch.empty(0, 3)\nprint(torch.clamp(x, 0, 1).shape)\n```",
    );
    let pattern = ContextAwareBugPattern {
        source_issue: issue.issue_ref(),
        bug_api: "torch.clamp".into(),
        triggering_context: "an empty input tensor".into(),
        oracle_design: "output shape equals input shape".into(),
        expected_behavior: "an empty tensor of shape (0, 3)".into(),
        actual_behavior: "a tensor of shape (0,)".into(),
        repro_program: "import torch\nx = torch.empty(0, 3)\nout = torch.clamp(x, 0, 1)\nif out.shape != x.shape:\n    print(\"BUG FOUND\")\n".into(),
        bug_category: BugCategory::WrongOutputs,
    };
    let program = "import torch\nx = torch.empty(0, 3)\ntry:\n    torch.clip(x, 1, 0)\nexcept RuntimeError as e:\n    if 'min' not in str(e):\n        print(\"BUG FOUND\")\n";
    let test = transferred(
        &issue,
        "torch.clip",
        "an empty input with min > max",
        "error message names min",
        program,
    );
    let execution = fired(vec![TraceEntry::new(
        SiteKind::Exception,
        "e",
        "RuntimeError('bad bounds')",
    )]);
    Scenario {
        name: "clamp empty-output vs clip error-message",
        issue,
        pattern,
        test,
        execution,
        chat: |req| {
            match req.template_id {
            TemplateId::SameBugType => "Both check output values.\nORIGINAL_TYPE: Functional_Defect\nTRANSFERRED_TYPE: Functional_Defect".into(),
            TemplateId::SameBugPattern => "One checks the output shape, the other an error message.\nVERDICT: NO".into(),
            _ => verdict(true),
        }
        },
        expected_failure: Some(Stage::SameBugPattern),
    }
}

/// fmod test asserting commutativity, which fmod never had.
pub fn fmod_commutativity() -> Scenario {
    let issue = issue(
        1101,
        "torch.remainder gives wrong results for negative divisors",
        "```python\nprint(torch.remainder(torch.tensor(-3.), torch.tensor(2.)))\n```",
    );
    let pattern = ContextAwareBugPattern {
        source_issue: issue.issue_ref(),
        bug_api: "torch.remainder".into(),
        triggering_context: "negative operands".into(),
        oracle_design: "compare with the mathematical definition".into(),
        expected_behavior: "1.0".into(),
        actual_behavior: "-1.0".into(),
        repro_program: "import torch\nout = torch.remainder(torch.tensor(-3.), torch.tensor(2.))\nif out.item() != 1.0:\n    print(\"BUG FOUND\")\n".into(),
        bug_category: BugCategory::WrongOutputs,
    };
    let program = "import torch\na = torch.tensor(5.)\nb = torch.tensor(3.)\nif torch.fmod(a, b) != torch.fmod(b, a):\n    print(\"BUG FOUND\")\n";
    let test = transferred(
        &issue,
        "torch.fmod",
        "swapped operands",
        "fmod(a, b) == fmod(b, a)",
        program,
    );
    let execution = fired(vec![
        TraceEntry::new(SiteKind::CallChainStep, "torch.fmod(a, b)", "tensor(2.)"),
        TraceEntry::new(SiteKind::CallChainStep, "torch.fmod(b, a)", "tensor(3.)"),
    ]);
    Scenario {
        name: "fmod commutativity oracle",
        issue,
        pattern,
        test,
        execution,
        chat: |req| {
            match req.template_id {
            TemplateId::SameBugType => "ORIGINAL_TYPE: Functional_Defect\nTRANSFERRED_TYPE: Functional_Defect".into(),
            TemplateId::BugFreeVerification => {
                "fmod is non-commutative by definition, so the oracle fires on a correct API.\nVERDICT: NO".into()
            }
            _ => verdict(true),
        }
        },
        expected_failure: Some(Stage::OracleCorrectness),
    }
}

fn argmax_issue() -> IssueRecord {
    issue(
        1201,
        "argmax propagates gradients",
        "```python\nx = torch.randn(3, requires_grad=True)\ny = torch.argmax(x)\nprint(y.requires_grad)\n```",
    )
}

fn argmax_pattern(issue: &IssueRecord) -> ContextAwareBugPattern {
    ContextAwareBugPattern {
        source_issue: issue.issue_ref(),
        bug_api: "torch.argmax".into(),
        triggering_context: "an input requiring grad".into(),
        oracle_design: "the output must not require grad".into(),
        expected_behavior: "requires_grad is False".into(),
        actual_behavior: "requires_grad is True".into(),
        repro_program: "import torch\nx = torch.randn(3, requires_grad=True)\nif torch.argmax(x).requires_grad:\n    print(\"BUG FOUND\")\n".into(),
        bug_category: BugCategory::WrongGradient,
    }
}

fn gradient_chat(req: &LlmRequest, false_positive: bool) -> String {
    match req.template_id {
        TemplateId::SameBugType => {
            "ORIGINAL_TYPE: Functional_Defect\nTRANSFERRED_TYPE: Functional_Defect".into()
        }
        TemplateId::CriteriaExtraction => fields(&[(
            "criteria",
            "argmax is non-differentiable; gradient propagation signals a bug",
        )]),
        TemplateId::RealBug => "The output carries a gradient.\nVERDICT: YES".into(),
        TemplateId::DebateChallenge if false_positive => {
            "amax is differentiable by design, so a gradient is expected.".into()
        }
        TemplateId::DebateChallenge => {
            "The API documents an integer result, so a gradient is wrong.".into()
        }
        // The last epoch dissents on its own; AND voting must still filter.
        TemplateId::DebateSummary if false_positive && req.epoch < 2 => "FALSE_POSITIVE: NO".into(),
        TemplateId::DebateSummary if false_positive => {
            "The challenge holds.\nFALSE_POSITIVE: YES".into()
        }
        TemplateId::DebateSummary => "FALSE_POSITIVE: NO".into(),
        _ => verdict(true),
    }
}

/// amax judged under the argmax criterion: amax is differentiable.
pub fn argmax_vs_amax() -> Scenario {
    let issue = argmax_issue();
    let pattern = argmax_pattern(&issue);
    let program = "import torch\nx = torch.randn(3, requires_grad=True)\nif torch.amax(x).requires_grad:\n    print(\"BUG FOUND\")\n";
    let test = transferred(
        &issue,
        "torch.amax",
        "an input requiring grad",
        "amax output must not require grad",
        program,
    );
    let execution = fired(vec![TraceEntry::new(
        SiteKind::CallChainStep,
        "torch.amax(x)",
        "tensor(1.2, grad_fn=<AmaxBackward0>)",
    )]);
    Scenario {
        name: "amax under the argmax criterion",
        issue,
        pattern,
        test,
        execution,
        chat: |req| gradient_chat(req, true),
        expected_failure: Some(Stage::CriteriaJudgment),
    }
}

/// argmin really does carry a gradient where it must not.
pub fn argmax_vs_argmin() -> Scenario {
    let issue = argmax_issue();
    let pattern = argmax_pattern(&issue);
    let program = "import torch\nx = torch.randn(3, requires_grad=True)\nif torch.argmin(x).requires_grad:\n    print(\"BUG FOUND\")\n";
    let test = transferred(
        &issue,
        "torch.argmin",
        "an input requiring grad",
        "argmin output must not require grad",
        program,
    );
    let execution = fired(vec![TraceEntry::new(
        SiteKind::CallChainStep,
        "torch.argmin(x)",
        "tensor(2, grad_fn=<ArgminBackward0>)",
    )]);
    Scenario {
        name: "argmin passing every stage",
        issue,
        pattern,
        test,
        execution,
        chat: |req| gradient_chat(req, false),
        expected_failure: None,
    }
}

pub fn all() -> Vec<Scenario> {
    vec![
        clamp_vs_clip(),
        fmod_commutativity(),
        argmax_vs_amax(),
        argmax_vs_argmin(),
    ]
}

impl Scenario {
    pub fn candidate(&self) -> Candidate<'_> {
        Candidate {
            issue: &self.issue,
            pattern: &self.pattern,
            original_trace: &[],
            test: &self.test,
            execution: &self.execution,
        }
    }

    pub fn source(&self) -> IssueRef {
        self.issue.issue_ref()
    }

    /// Validates once against the scripted model while recording, then again
    /// from the cassette alone. Returns both verdicts.
    pub fn record_and_replay(
        &self,
        dir: &std::path::Path,
    ) -> (ValidationVerdict, ValidationVerdict) {
        let cassette = dir.join(format!("{}.jsonl", self.issue.number));
        let recorded = {
            let gateway = recording_gateway(&cassette, ScriptedProvider::chat_only(self.chat));
            Validator::new(&gateway, ValidatorConfig::default())
                .validate_candidate(&self.candidate())
        };
        let gateway = replay_gateway(&cassette);
        let replayed = Validator::new(&gateway, ValidatorConfig::default())
            .validate_candidate(&self.candidate());
        (recorded, replayed)
    }
}
