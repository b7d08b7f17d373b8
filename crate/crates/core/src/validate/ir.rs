//! Bug-type IR: the seven definitions, execution facts, and a structural
//! matcher that checks a definition's clauses against facts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{ExecStatus, ExecutionResult, SiteKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IrBugType {
    #[serde(rename = "Device_Inconsistency")]
    DeviceInconsistency,
    #[serde(rename = "JIT_Eager_Mismatch")]
    JitEagerMismatch,
    #[serde(rename = "Compile_Eager_Mismatch")]
    CompileEagerMismatch,
    #[serde(rename = "Functional_Defect")]
    FunctionalDefect,
    #[serde(rename = "Execution_Crash")]
    ExecutionCrash,
    #[serde(rename = "Precision_Degradation")]
    PrecisionDegradation,
    #[serde(rename = "Security_Risk")]
    SecurityRisk,
}

impl IrBugType {
    pub const ALL: [IrBugType; 7] = [
        IrBugType::DeviceInconsistency,
        IrBugType::JitEagerMismatch,
        IrBugType::CompileEagerMismatch,
        IrBugType::FunctionalDefect,
        IrBugType::ExecutionCrash,
        IrBugType::PrecisionDegradation,
        IrBugType::SecurityRisk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IrBugType::DeviceInconsistency => "Device_Inconsistency",
            IrBugType::JitEagerMismatch => "JIT_Eager_Mismatch",
            IrBugType::CompileEagerMismatch => "Compile_Eager_Mismatch",
            IrBugType::FunctionalDefect => "Functional_Defect",
            IrBugType::ExecutionCrash => "Execution_Crash",
            IrBugType::PrecisionDegradation => "Precision_Degradation",
            IrBugType::SecurityRisk => "Security_Risk",
        }
    }

    /// Cross-environment mismatch types get the real-mismatch check instead
    /// of the same-pattern check.
    pub fn is_mismatch(self) -> bool {
        matches!(
            self,
            IrBugType::DeviceInconsistency
                | IrBugType::JitEagerMismatch
                | IrBugType::CompileEagerMismatch
        )
    }

    pub fn definition(self) -> &'static str {
        match self {
            IrBugType::DeviceInconsistency => {
                "Device_Inconsistency ::= VarDef(tensor)[device=cpu:*] -> v_cpu \
                 AND VarDef(tensor)[device=cuda:*] -> v_gpu \
                 AND OracleCheck(ValueCorrectness)(condition=Compare(v_cpu, v_gpu)) -> FAIL"
            }
            IrBugType::JitEagerMismatch => {
                "JIT_Eager_Mismatch ::= APICall(api)[mode=eager] -> v1 \
                 AND APICall(api)[mode=jit_trace|jit_script] -> v2 \
                 AND OracleCheck(ValueCorrectness)(condition=Compare(v1, v2)) -> FAIL"
            }
            IrBugType::CompileEagerMismatch => {
                "Compile_Eager_Mismatch ::= APICall(api)[mode=eager] -> v1 \
                 AND APICall(api)[mode=compile(fx|dynamo)] -> v2 \
                 AND OracleCheck(ValueCorrectness)(condition=Compare(v1, v2)) -> FAIL"
            }
            IrBugType::FunctionalDefect => {
                "Functional_Defect ::= APICall(api) -> v5 \
                 AND OracleCheck(ValueCorrectness)(condition=MatchValue(v5, expected), criteria=[dtype, shape, numerical]) -> MISMATCH"
            }
            IrBugType::ExecutionCrash => {
                "Execution_Crash ::= APICall(api)[mode=*] -> fault \
                 AND OracleCheck(ExceptionType)(condition=FaultType(fault) in {FloatingPointException, SegFault, Aborted}) -> TRIGGERED"
            }
            IrBugType::PrecisionDegradation => {
                "Precision_Degradation ::= APICall(api) -> v \
                 AND OracleCheck(ValueCorrectness)(condition=Compare(v, expected), tolerance={abs: 1e-4, rel: 1e-5}) -> FAIL"
            }
            IrBugType::SecurityRisk => {
                "Security_Risk ::= (VarDef | APICall | ControlBlock)[security_sensitive=true] \
                 AND OracleCheck(SecurityViolation)(condition=SecurityPolicyCheck(violation_type, severity in {high, medium, low}), \
                 capture_tensors=[...]) -> VIOLATION_DETECTED"
            }
        }
    }

    /// All seven definitions, one per line, for the classification prompt.
    pub fn catalog_text() -> String {
        IrBugType::ALL
            .iter()
            .map(|t| t.definition())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl fmt::Display for IrBugType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IrBugType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .trim_matches(|c| c == '`' || c == '*' || c == '.')
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        IrBugType::ALL
            .into_iter()
            .find(|t| t.as_str().replace('_', "").to_ascii_lowercase() == key)
            .ok_or_else(|| Error::UnknownIrType(s.trim().to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Eager,
    JitTrace,
    JitScript,
    CompileFx,
    CompileDynamo,
}

impl ExecMode {
    fn is_jit(self) -> bool {
        matches!(self, ExecMode::JitTrace | ExecMode::JitScript)
    }

    fn is_compile(self) -> bool {
        matches!(self, ExecMode::CompileFx | ExecMode::CompileDynamo)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    FloatingPointException,
    SegFault,
    Aborted,
    /// Any other failure, e.g. a host-language exception name.
    Other(String),
}

impl FaultKind {
    /// The fault set of the crash definition.
    pub fn is_crash_fault(&self) -> bool {
        !matches!(self, FaultKind::Other(_))
    }

    pub fn from_signal(signal_name: &str) -> FaultKind {
        match signal_name.trim().to_ascii_uppercase().as_str() {
            "SIGSEGV" | "SIGBUS" => FaultKind::SegFault,
            "SIGFPE" => FaultKind::FloatingPointException,
            "SIGABRT" | "SIGIOT" => FaultKind::Aborted,
            other => FaultKind::Other(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CheckKind {
    ValueCorrectness,
    ExceptionType,
    SecurityViolation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Var(String),
    Expected,
}

impl Operand {
    pub fn var(name: &str) -> Self {
        Operand::Var(name.to_string())
    }

    fn is_var(&self, name: &str) -> bool {
        matches!(self, Operand::Var(v) if v == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Compare(Operand, Operand),
    MatchValue(Operand, Operand),
    FaultType(String),
    SecurityPolicyCheck {
        violation_type: String,
        severity: Severity,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    /// The tolerance fixed by the precision-degradation definition.
    pub const PRECISION: Tolerance = Tolerance {
        abs: 1e-4,
        rel: 1e-5,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Pass,
    Fail,
    Triggered,
    Mismatch,
    ViolationDetected,
}

pub type Attrs = BTreeMap<String, String>;

/// One execution-relevant fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceFact {
    VarDef {
        var: String,
        ty: String,
        #[serde(default)]
        attrs: Attrs,
    },
    ApiCall {
        api: String,
        #[serde(default)]
        mode: Option<ExecMode>,
        output: String,
        #[serde(default)]
        fault: Option<FaultKind>,
        #[serde(default)]
        attrs: Attrs,
    },
    OracleCheck {
        check: CheckKind,
        condition: Condition,
        #[serde(default)]
        tolerance: Option<Tolerance>,
        #[serde(default)]
        criteria: Vec<String>,
        #[serde(default)]
        capture: Vec<String>,
        outcome: Outcome,
    },
    ControlBlock {
        #[serde(default)]
        attrs: Attrs,
    },
}

impl TraceFact {
    fn attrs(&self) -> Option<&Attrs> {
        match self {
            TraceFact::VarDef { attrs, .. }
            | TraceFact::ApiCall { attrs, .. }
            | TraceFact::ControlBlock { attrs } => Some(attrs),
            TraceFact::OracleCheck { .. } => None,
        }
    }
}

fn device_is(attrs: &Attrs, family: &str) -> bool {
    attrs.get("device").is_some_and(|d| {
        d == family
            || d.strip_prefix(family)
                .is_some_and(|rest| rest.starts_with(':'))
    })
}

fn tensors_on<'a>(facts: &'a [TraceFact], family: &'a str) -> impl Iterator<Item = &'a str> + 'a {
    facts.iter().filter_map(move |f| match f {
        TraceFact::VarDef { var, ty, attrs } if ty == "tensor" && device_is(attrs, family) => {
            Some(var.as_str())
        }
        _ => None,
    })
}

fn calls<'a>(
    facts: &'a [TraceFact],
) -> impl Iterator<Item = (&'a str, Option<ExecMode>, &'a str, Option<&'a FaultKind>)> {
    facts.iter().filter_map(|f| match f {
        TraceFact::ApiCall {
            api,
            mode,
            output,
            fault,
            ..
        } => Some((api.as_str(), *mode, output.as_str(), fault.as_ref())),
        _ => None,
    })
}

struct Check<'a> {
    check: CheckKind,
    condition: &'a Condition,
    tolerance: Option<Tolerance>,
    criteria: &'a [String],
    outcome: Outcome,
}

fn checks(facts: &[TraceFact]) -> impl Iterator<Item = Check<'_>> {
    facts.iter().filter_map(|f| match f {
        TraceFact::OracleCheck {
            check,
            condition,
            tolerance,
            criteria,
            outcome,
            ..
        } => Some(Check {
            check: *check,
            condition,
            tolerance: *tolerance,
            criteria,
            outcome: *outcome,
        }),
        _ => None,
    })
}

/// A failing value comparison between exactly `a` and `b`, in either order.
fn compare_fails(facts: &[TraceFact], a: &str, b: &str) -> bool {
    checks(facts).any(|c| {
        c.check == CheckKind::ValueCorrectness
            && c.outcome == Outcome::Fail
            && matches!(c.condition, Condition::Compare(x, y)
                if (x.is_var(a) && y.is_var(b)) || (x.is_var(b) && y.is_var(a)))
    })
}

fn mode_mismatch(facts: &[TraceFact], other: impl Fn(ExecMode) -> bool) -> bool {
    calls(facts).any(|(api, mode, v1, _)| {
        mode == Some(ExecMode::Eager)
            && calls(facts).any(|(api2, mode2, v2, _)| {
                api2 == api && mode2.is_some_and(&other) && v1 != v2 && compare_fails(facts, v1, v2)
            })
    })
}

const FUNCTIONAL_CRITERIA: [&str; 3] = ["dtype", "shape", "numerical"];

/// True iff every clause of `bug_type` is satisfied by `facts` under one
/// consistent binding of the value names.
pub fn match_ir(facts: &[TraceFact], bug_type: IrBugType) -> bool {
    match bug_type {
        IrBugType::DeviceInconsistency => tensors_on(facts, "cpu")
            .any(|v_cpu| tensors_on(facts, "cuda").any(|v_gpu| v_cpu != v_gpu && compare_fails(facts, v_cpu, v_gpu))),
        IrBugType::JitEagerMismatch => mode_mismatch(facts, ExecMode::is_jit),
        IrBugType::CompileEagerMismatch => mode_mismatch(facts, ExecMode::is_compile),
        IrBugType::FunctionalDefect => calls(facts).any(|(_, _, v5, _)| {
            checks(facts).any(|c| {
                c.check == CheckKind::ValueCorrectness
                    && c.outcome == Outcome::Mismatch
                    && !c.criteria.is_empty()
                    && c.criteria.iter().all(|k| FUNCTIONAL_CRITERIA.contains(&k.as_str()))
                    && matches!(c.condition, Condition::MatchValue(x, Operand::Expected) if x.is_var(v5))
            })
        }),
        IrBugType::ExecutionCrash => calls(facts).any(|(_, _, out, fault)| {
            fault.is_some_and(FaultKind::is_crash_fault)
                && checks(facts).any(|c| {
                    c.check == CheckKind::ExceptionType
                        && c.outcome == Outcome::Triggered
                        && matches!(c.condition, Condition::FaultType(v) if v == out)
                })
        }),
        IrBugType::PrecisionDegradation => calls(facts).any(|(_, _, v, _)| {
            checks(facts).any(|c| {
                c.check == CheckKind::ValueCorrectness
                    && c.outcome == Outcome::Fail
                    && c.tolerance == Some(Tolerance::PRECISION)
                    && matches!(c.condition, Condition::Compare(x, Operand::Expected) if x.is_var(v))
            })
        }),
        IrBugType::SecurityRisk => {
            facts
                .iter()
                .any(|f| f.attrs().is_some_and(|a| a.get("security_sensitive").is_some_and(|v| v == "true")))
                && checks(facts).any(|c| {
                    c.check == CheckKind::SecurityViolation
                        && c.outcome == Outcome::ViolationDetected
                        && matches!(c.condition, Condition::SecurityPolicyCheck { .. })
                })
        }
    }
}

/// The first type whose definition the facts satisfy, in catalog order.
pub fn classify_facts(facts: &[TraceFact]) -> Option<IrBugType> {
    IrBugType::ALL.into_iter().find(|&t| match_ir(facts, t))
}

/// Facts observable from an execution: tensor definitions with their
/// device, traced call-chain steps, and signal-level faults. Oracle checks
/// other than the fault check are not inferred.
pub fn derive_facts(program: &str, execution: &ExecutionResult) -> Vec<TraceFact> {
    let mut facts = Vec::new();
    for entry in &execution.trace {
        match entry.site_kind {
            SiteKind::Assignment
            | SiteKind::AttributeAssignment
            | SiteKind::IndexAssignment
            | SiteKind::Unpacking => {
                let repr = entry.value_repr.trim_start();
                let ty = if repr.starts_with("tensor(") {
                    "tensor"
                } else {
                    "value"
                };
                let mut attrs = Attrs::new();
                if ty == "tensor" {
                    let device = repr
                        .split("device='")
                        .nth(1)
                        .and_then(|rest| rest.split('\'').next())
                        .unwrap_or("cpu");
                    attrs.insert("device".into(), device.to_string());
                }
                facts.push(TraceFact::VarDef {
                    var: entry.expression_text.clone(),
                    ty: ty.into(),
                    attrs,
                });
            }
            SiteKind::CallChainStep => facts.push(TraceFact::ApiCall {
                api: entry
                    .expression_text
                    .split('(')
                    .next()
                    .unwrap_or("")
                    .trim()
                    .to_string(),
                mode: None,
                output: entry.expression_text.clone(),
                fault: None,
                attrs: Attrs::new(),
            }),
            _ => {}
        }
    }
    if execution.status == ExecStatus::Crash {
        let fault = FaultKind::from_signal(execution.signal_name.as_deref().unwrap_or(""));
        facts.push(TraceFact::ApiCall {
            api: last_called_api(program).unwrap_or_else(|| "<program>".into()),
            mode: None,
            output: "fault".into(),
            fault: Some(fault),
            attrs: Attrs::new(),
        });
        facts.push(TraceFact::OracleCheck {
            check: CheckKind::ExceptionType,
            condition: Condition::FaultType("fault".into()),
            tolerance: None,
            criteria: Vec::new(),
            capture: Vec::new(),
            outcome: Outcome::Triggered,
        });
    }
    facts
}

/// The last dotted call target in the program, e.g. `torch.clamp`.
fn last_called_api(program: &str) -> Option<String> {
    static CALL: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(r"([A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)+)\s*\(").unwrap()
    });
    CALL.captures_iter(program)
        .filter_map(|c| c.get(1).map(|m| m.as_str().to_string()))
        .filter(|name| !name.starts_with("print"))
        .last()
}
