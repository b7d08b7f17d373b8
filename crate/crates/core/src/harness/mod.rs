//! Client side of the host-language harness protocol.
//!
//! The harness is a separate process speaking newline-delimited JSON over
//! stdio, one response per request in strict alternation. It catalogs the
//! target library, instruments generated programs and runs them in isolated
//! children. [`StdioHarness`] drives a live one; [`TranscriptHarness`]
//! replays recorded responses so campaigns run without it.

mod stdio;
mod transcript;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use stdio::StdioHarness;
pub use transcript::{RecordingHarness, TranscriptEntry, TranscriptHarness};

use crate::error::{Error, Result};
use crate::matcher::ApiRecord;
use crate::BUG_MARKER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Catalog,
    Instrument,
    Execute,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Catalog => "catalog",
            Action::Instrument => "instrument",
            Action::Execute => "execute",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessRequest {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_ref: Option<String>,
}

impl HarnessRequest {
    pub fn catalog(library_ref: &str) -> Self {
        HarnessRequest {
            action: Action::Catalog,
            program: None,
            timeout_seconds: None,
            library_ref: Some(library_ref.to_string()),
        }
    }

    pub fn instrument(program: &str) -> Self {
        HarnessRequest {
            action: Action::Instrument,
            program: Some(program.to_string()),
            timeout_seconds: None,
            library_ref: None,
        }
    }

    pub fn execute(program: &str, timeout_seconds: f64) -> Self {
        HarnessRequest {
            action: Action::Execute,
            program: Some(program.to_string()),
            timeout_seconds: Some(timeout_seconds),
            library_ref: None,
        }
    }

    /// The text a response depends on: the program, or the library for catalogs.
    pub fn subject(&self) -> &str {
        match self.action {
            Action::Catalog => self.library_ref.as_deref().unwrap_or(""),
            _ => self.program.as_deref().unwrap_or(""),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    Timeout,
    Crash,
    Error,
}

/// One response document. Fields beyond `status` depend on the action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessResponse {
    pub status: ResponseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stdout: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bug_found: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
    /// Instrumented source, for `instrument`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    /// Catalog payload, for `catalog`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub apis: Vec<ApiRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl HarnessResponse {
    pub fn ok() -> Self {
        HarnessResponse {
            status: ResponseStatus::Ok,
            exit_code: None,
            signal_name: None,
            stdout: None,
            stderr: None,
            bug_found: None,
            trace: Vec::new(),
            wall_time_seconds: None,
            program: None,
            apis: Vec::new(),
            error: None,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        HarnessResponse {
            status: ResponseStatus::Error,
            error: Some(message.into()),
            ..HarnessResponse::ok()
        }
    }

    /// An `execute` response as a well-formed harness would produce it.
    pub fn from_execution(result: &ExecutionResult) -> Self {
        HarnessResponse {
            status: match result.status {
                ExecStatus::Ok => ResponseStatus::Ok,
                ExecStatus::Timeout => ResponseStatus::Timeout,
                ExecStatus::Crash => ResponseStatus::Crash,
            },
            exit_code: Some(result.exit_code),
            signal_name: result.signal_name.clone(),
            stdout: Some(result.stdout.clone()),
            stderr: Some(result.stderr.clone()),
            bug_found: Some(result.bug_found),
            trace: result.trace.clone(),
            wall_time_seconds: Some(result.wall_time_seconds),
            ..HarnessResponse::ok()
        }
    }

    fn failure(&self, action: Action) -> Error {
        Error::Harness(format!(
            "{action} failed: {}",
            self.error.as_deref().unwrap_or("no diagnostic")
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Assignment,
    AttributeAssignment,
    IndexAssignment,
    Unpacking,
    Exception,
    ContextManager,
    ConditionSubexpr,
    CallChainStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub site_kind: SiteKind,
    pub expression_text: String,
    pub value_repr: String,
}

impl TraceEntry {
    pub fn new(
        site_kind: SiteKind,
        expression_text: impl Into<String>,
        value_repr: impl Into<String>,
    ) -> Self {
        TraceEntry {
            site_kind,
            expression_text: expression_text.into(),
            value_repr: value_repr.into(),
        }
    }
}

/// Renders a trace the way prompts show it, one `expr = value` per line.
pub fn format_trace(trace: &[TraceEntry]) -> String {
    if trace.is_empty() {
        return "(no trace)".to_string();
    }
    trace
        .iter()
        .map(|t| format!("{} = {}", t.expression_text, t.value_repr))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Timeout,
    Crash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub exit_code: i32,
    pub signal_name: Option<String>,
    pub stdout: String,
    pub stderr: String,
    pub bug_found: bool,
    pub trace: Vec<TraceEntry>,
    pub wall_time_seconds: f64,
}

impl ExecutionResult {
    /// A normal exit with the given stdout; `bug_found` follows the marker rule.
    pub fn exited(exit_code: i32, stdout: impl Into<String>) -> Self {
        let stdout = stdout.into();
        ExecutionResult {
            status: ExecStatus::Ok,
            exit_code,
            signal_name: None,
            bug_found: has_marker(&stdout),
            stdout,
            stderr: String::new(),
            trace: Vec::new(),
            wall_time_seconds: 0.0,
        }
    }

    pub fn crashed(signal_name: impl Into<String>) -> Self {
        ExecutionResult {
            status: ExecStatus::Crash,
            exit_code: -1,
            signal_name: Some(signal_name.into()),
            ..ExecutionResult::exited(-1, "")
        }
    }

    pub fn with_trace(mut self, trace: Vec<TraceEntry>) -> Self {
        self.trace = trace;
        self
    }

    /// Stdout and stderr joined for prompts.
    pub fn output_text(&self) -> String {
        let mut out = format!("status: {:?}, exit code {}", self.status, self.exit_code);
        if let Some(sig) = &self.signal_name {
            out.push_str(&format!(", signal {sig}"));
        }
        out.push_str("\n--- stdout ---\n");
        out.push_str(&self.stdout);
        if !self.stderr.is_empty() {
            out.push_str("\n--- stderr ---\n");
            out.push_str(&self.stderr);
        }
        out
    }

    fn from_response(resp: HarnessResponse) -> Result<Self> {
        let status = match resp.status {
            ResponseStatus::Ok => ExecStatus::Ok,
            ResponseStatus::Timeout => ExecStatus::Timeout,
            ResponseStatus::Crash => ExecStatus::Crash,
            ResponseStatus::Error => return Err(resp.failure(Action::Execute)),
        };
        if status == ExecStatus::Crash && resp.signal_name.is_none() {
            return Err(Error::Harness("crash response without signal_name".into()));
        }
        let stdout = resp.stdout.unwrap_or_default();
        let bug_found = has_marker(&stdout);
        if resp.bug_found.is_some_and(|b| b != bug_found) {
            log::warn!("harness bug_found disagrees with the marker rule; using the marker rule");
        }
        Ok(ExecutionResult {
            status,
            exit_code: resp
                .exit_code
                .unwrap_or(if status == ExecStatus::Ok { 0 } else { -1 }),
            signal_name: resp.signal_name,
            stdout,
            stderr: resp.stderr.unwrap_or_default(),
            bug_found,
            trace: resp.trace,
            wall_time_seconds: resp.wall_time_seconds.unwrap_or(0.0),
        })
    }
}

/// True iff some stdout line is exactly the marker.
pub fn has_marker(stdout: &str) -> bool {
    stdout
        .split('\n')
        .any(|line| line.strip_suffix('\r').unwrap_or(line) == BUG_MARKER)
}

pub trait Harness: Send + Sync {
    /// One request/response exchange.
    fn call(&self, request: &HarnessRequest) -> Result<HarnessResponse>;

    fn catalog(&self, library_ref: &str) -> Result<Vec<ApiRecord>> {
        let resp = self.call(&HarnessRequest::catalog(library_ref))?;
        match resp.status {
            ResponseStatus::Ok => Ok(resp.apis),
            _ => Err(resp.failure(Action::Catalog)),
        }
    }

    fn instrument(&self, program: &str) -> Result<String> {
        let resp = self.call(&HarnessRequest::instrument(program))?;
        match (resp.status, resp.program) {
            (ResponseStatus::Ok, Some(p)) => Ok(p),
            (ResponseStatus::Ok, None) => {
                Err(Error::Harness("instrument response without program".into()))
            }
            (_, program) => Err(HarnessResponse { program, ..resp }.failure(Action::Instrument)),
        }
    }

    fn execute(&self, program: &str, timeout_seconds: f64) -> Result<ExecutionResult> {
        ExecutionResult::from_response(
            self.call(&HarnessRequest::execute(program, timeout_seconds))?,
        )
    }
}

impl<H: Harness + ?Sized> Harness for &H {
    fn call(&self, request: &HarnessRequest) -> Result<HarnessResponse> {
        (**self).call(request)
    }
}

impl<H: Harness + ?Sized> Harness for std::sync::Arc<H> {
    fn call(&self, request: &HarnessRequest) -> Result<HarnessResponse> {
        (**self).call(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_is_exact_line() {
        assert!(has_marker("BUG FOUND"));
        assert!(has_marker("x\nBUG FOUND\ny\n"));
        assert!(has_marker("BUG FOUND\r\n"));
        for s in [
            "bug found",
            "BUG FOUND!",
            " BUG FOUND",
            "BUG  FOUND",
            "BUG FOUND ",
            "xBUG FOUND",
            "",
        ] {
            assert!(!has_marker(s), "{s:?}");
        }
    }

    #[test]
    fn execute_response_wire_shape() {
        let line = r#"{"status":"ok","exit_code":0,"stdout":"BUG FOUND\n","stderr":"","bug_found":true,
            "trace":[{"site_kind":"assignment","expression_text":"a","value_repr":"1"}],"wall_time_seconds":0.2}"#;
        let resp: HarnessResponse = serde_json::from_str(line).unwrap();
        let r = ExecutionResult::from_response(resp).unwrap();
        assert!(r.bug_found);
        assert_eq!(
            r.trace,
            vec![TraceEntry::new(SiteKind::Assignment, "a", "1")]
        );
    }

    #[test]
    fn marker_rule_overrides_harness_flag() {
        let mut resp = HarnessResponse::ok();
        resp.stdout = Some("bug found\n".into());
        resp.bug_found = Some(true);
        assert!(!ExecutionResult::from_response(resp).unwrap().bug_found);
    }

    #[test]
    fn crash_needs_signal_and_error_is_reported() {
        let mut resp = HarnessResponse::ok();
        resp.status = ResponseStatus::Crash;
        assert!(ExecutionResult::from_response(resp.clone()).is_err());
        resp.signal_name = Some("SIGSEGV".into());
        let r = ExecutionResult::from_response(resp).unwrap();
        assert_eq!(r.status, ExecStatus::Crash);
        assert!(matches!(
            ExecutionResult::from_response(HarnessResponse::error("boom")),
            Err(Error::Harness(m)) if m.contains("boom")
        ));
    }

    #[test]
    fn request_serialization_omits_unused_fields() {
        let v = serde_json::to_value(HarnessRequest::execute("print(1)", 5.0)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"action":"execute","program":"print(1)","timeout_seconds":5.0})
        );
        let v = serde_json::to_value(HarnessRequest::catalog("stublib")).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"action":"catalog","library_ref":"stublib"})
        );
    }
}
