//! The line-delimited JSON protocol spoken with the harness process.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;

use serde_json::{json, Value};

use xferfuzz_core::harness::{
    has_marker, ExecStatus, HarnessRequest, HarnessResponse, RecordingHarness, SiteKind,
    StdioHarness, TranscriptHarness,
};
use xferfuzz_core::{Error, ExecutionResult, Harness, TraceEntry, BUG_MARKER};

fn mock_command() -> Option<Vec<String>> {
    let ok = Command::new("python3")
        .arg("-c")
        .arg("pass")
        .status()
        .is_ok_and(|s| s.success());
    if !ok {
        eprintln!("python3 unavailable; skipping");
        return None;
    }
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mock_harness.py");
    Some(vec!["python3".into(), script.display().to_string()])
}

fn mock(parallelism: usize) -> Option<StdioHarness> {
    Some(StdioHarness::launch(mock_command()?, parallelism).unwrap())
}

#[test]
fn request_documents_carry_only_their_fields() {
    assert_eq!(
        serde_json::to_value(HarnessRequest::catalog("torch")).unwrap(),
        json!({"action": "catalog", "library_ref": "torch"})
    );
    assert_eq!(
        serde_json::to_value(HarnessRequest::instrument("x = 1")).unwrap(),
        json!({"action": "instrument", "program": "x = 1"})
    );
    assert_eq!(
        serde_json::to_value(HarnessRequest::execute("x = 1", 2.5)).unwrap(),
        json!({"action": "execute", "program": "x = 1", "timeout_seconds": 2.5})
    );
}

#[test]
fn trace_entry_and_execution_result_field_names() {
    let kinds = [
        (SiteKind::Assignment, "assignment"),
        (SiteKind::AttributeAssignment, "attribute_assignment"),
        (SiteKind::IndexAssignment, "index_assignment"),
        (SiteKind::Unpacking, "unpacking"),
        (SiteKind::Exception, "exception"),
        (SiteKind::ContextManager, "context_manager"),
        (SiteKind::ConditionSubexpr, "condition_subexpr"),
        (SiteKind::CallChainStep, "call_chain_step"),
    ];
    for (kind, wire) in kinds {
        let v = serde_json::to_value(TraceEntry::new(kind, "a.b()", "1")).unwrap();
        assert_eq!(
            v,
            json!({"site_kind": wire, "expression_text": "a.b()", "value_repr": "1"})
        );
    }

    let r = ExecutionResult::crashed("SIGFPE");
    let v = serde_json::to_value(&r).unwrap();
    let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    let expected: BTreeSet<&str> = [
        "status",
        "exit_code",
        "signal_name",
        "stdout",
        "stderr",
        "bug_found",
        "trace",
        "wall_time_seconds",
    ]
    .into_iter()
    .collect();
    assert_eq!(keys, expected);
    assert_eq!(v["status"], "crash");
    assert_eq!(v["signal_name"], "SIGFPE");
    let back: ExecutionResult = serde_json::from_value(v).unwrap();
    assert_eq!(back, r);
}

#[test]
fn marker_rule() {
    assert_eq!(BUG_MARKER, "BUG FOUND");
    for yes in [
        "BUG FOUND",
        "BUG FOUND\n",
        "a\nBUG FOUND\nb",
        "x\r\nBUG FOUND\r\n",
    ] {
        assert!(has_marker(yes), "{yes:?}");
    }
    for no in [
        "bug found",
        "BUG  FOUND",
        " BUG FOUND",
        "BUG FOUND ",
        "BUG FOUND!",
        "Bug Found",
        "BUGFOUND",
        "",
    ] {
        assert!(!has_marker(no), "{no:?}");
    }
}

#[test]
fn response_parsing_recomputes_the_marker() {
    let doc = json!({"status": "ok", "exit_code": 0, "stdout": "bug found\n", "bug_found": true});
    let resp: HarnessResponse = serde_json::from_value(doc).unwrap();
    let mut t = TranscriptHarness::new();
    t.insert(&HarnessRequest::execute("p", 1.0), resp);
    let r = t.execute("p", 1.0).unwrap();
    assert!(!r.bug_found, "the marker rule wins over the harness flag");

    let unknown: Result<HarnessResponse, _> = serde_json::from_value(json!({"status": "exploded"}));
    assert!(unknown.is_err());
}

#[test]
fn catalog_and_instrument_over_stdio() {
    let Some(h) = mock(1) else { return };
    let apis = h.catalog("lib").unwrap();
    assert_eq!(apis.len(), 2);
    assert_eq!(apis[0].qualified_name, "lib.add");
    assert_eq!(apis[0].signature(), "lib.add(input, alpha=...)");
    assert_eq!(apis[1].module_path, "lib.nn");
    assert!(apis[1].signature_params.is_empty());
    assert_eq!(h.instrument("x = 1").unwrap(), "# traced\nx = 1");
}

#[test]
fn execution_statuses_over_stdio() {
    let Some(h) = mock(1) else { return };

    let fired = h.execute("x = 1\nfire", 5.0).unwrap();
    assert_eq!(fired.status, ExecStatus::Ok);
    assert!(fired.bug_found);
    assert_eq!(
        fired.trace,
        vec![TraceEntry::new(
            SiteKind::CallChainStep,
            "lib.f(x)",
            "tensor([1.])"
        )]
    );

    let quiet = h.execute("x = 1\nquiet", 5.0).unwrap();
    assert!(!quiet.bug_found);

    let crash = h.execute("CRASH", 5.0).unwrap();
    assert_eq!(crash.status, ExecStatus::Crash);
    assert_eq!(crash.signal_name.as_deref(), Some("SIGSEGV"));
    assert!(!crash.bug_found);

    let timeout = h.execute("SLEEP", 1.0).unwrap();
    assert_eq!(timeout.status, ExecStatus::Timeout);
    assert_eq!(timeout.stdout, "partial\n");

    let err = h.execute("FAIL", 5.0).unwrap_err();
    assert!(
        matches!(&err, Error::Harness(m) if m.contains("SyntaxError")),
        "{err}"
    );
}

#[test]
fn a_broken_reply_fails_one_request_only() {
    let Some(h) = mock(1) else { return };
    let err = h.execute("GARBAGE", 5.0).unwrap_err();
    assert!(
        matches!(&err, Error::Harness(m) if m.contains("malformed")),
        "{err}"
    );
    assert!(h.execute("after garbage\nfire", 5.0).unwrap().bug_found);

    let err = h.execute("DIE", 5.0).unwrap_err();
    assert!(matches!(err, Error::Harness(_)), "{err}");
    assert!(h.execute("after death\nfire", 5.0).unwrap().bug_found);
}

#[test]
fn a_pool_answers_each_request_with_its_own_reply() {
    let Some(h) = mock(3) else { return };
    let pids: BTreeSet<String> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..6)
            .map(|t| {
                let h = &h;
                s.spawn(move || {
                    let mut pids = Vec::new();
                    for i in 0..10 {
                        let tag = format!("req-{t}-{i}");
                        let r = h.execute(&format!("x = 1\n{tag}"), 5.0).unwrap();
                        assert!(r.stdout.contains(&format!("echo {tag}\n")), "{}", r.stdout);
                        pids.push(r.stdout.lines().next().unwrap().to_string());
                    }
                    pids
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect()
    });
    assert!(pids.len() <= 3, "{pids:?}");
}

#[test]
fn recording_then_replaying_the_process() {
    let Some(live) = mock(1) else { return };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("harness.jsonl");
    let recording = RecordingHarness::new(live, &path);
    let catalog = recording.catalog("lib").unwrap();
    let program = recording.instrument("x = 1\nfire").unwrap();
    let executed = recording.execute(&program, 5.0).unwrap();
    recording.execute(&program, 5.0).unwrap();

    let lines: Vec<Value> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3, "a repeated request is stored once");

    let replay = TranscriptHarness::load(&path).unwrap();
    assert_eq!(replay.catalog("lib").unwrap(), catalog);
    assert_eq!(replay.instrument("x = 1\nfire").unwrap(), program);
    assert_eq!(replay.execute(&program, 5.0).unwrap(), executed);
    assert!(matches!(
        replay.execute("never sent", 5.0),
        Err(Error::Harness(_))
    ));
}
