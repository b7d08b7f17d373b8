use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Condvar, Mutex};

use super::{Harness, HarnessRequest, HarnessResponse};
use crate::error::{Error, Result};

struct Worker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Worker {
    fn spawn(command: &[String]) -> Result<Worker> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("empty harness launch command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Harness(format!("cannot launch `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Worker {
            child,
            stdin,
            stdout,
        })
    }

    fn exchange(&mut self, line: &str) -> Result<HarnessResponse> {
        let io = |e: std::io::Error| Error::Harness(format!("harness pipe: {e}"));
        self.stdin.write_all(line.as_bytes()).map_err(io)?;
        self.stdin.write_all(b"\n").map_err(io)?;
        self.stdin.flush().map_err(io)?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply).map_err(io)? == 0 {
            return Err(Error::Harness("harness closed its output".into()));
        }
        serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Harness(format!("malformed harness response: {e}")))
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A pool of long-running harness processes. Each process serves one
/// request at a time; parallelism comes from the pool size.
pub struct StdioHarness {
    command: Vec<String>,
    idle: Mutex<Vec<Worker>>,
    available: Condvar,
}

impl StdioHarness {
    pub fn launch(command: Vec<String>, parallelism: usize) -> Result<Self> {
        let workers = (0..parallelism.max(1))
            .map(|_| Worker::spawn(&command))
            .collect::<Result<Vec<_>>>()?;
        Ok(StdioHarness {
            command,
            idle: Mutex::new(workers),
            available: Condvar::new(),
        })
    }

    fn checkout(&self) -> Worker {
        let mut idle = self.idle.lock().unwrap();
        loop {
            if let Some(w) = idle.pop() {
                return w;
            }
            idle = self.available.wait(idle).unwrap();
        }
    }

    fn checkin(&self, worker: Worker) {
        self.idle.lock().unwrap().push(worker);
        self.available.notify_one();
    }
}

impl Harness for StdioHarness {
    fn call(&self, request: &HarnessRequest) -> Result<HarnessResponse> {
        let line = serde_json::to_string(request)?;
        let mut worker = self.checkout();
        let result = match worker.exchange(&line) {
            Ok(resp) => Ok(resp),
            Err(first) => {
                // The process may have died under us; one fresh attempt.
                log::warn!("harness worker failed ({first}); restarting");
                match Worker::spawn(&self.command) {
                    Ok(fresh) => {
                        worker = fresh;
                        worker.exchange(&line)
                    }
                    Err(e) => {
                        // Keep the pool size stable even if relaunch fails.
                        self.checkin(worker);
                        return Err(e);
                    }
                }
            }
        };
        self.checkin(worker);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A shell loop answering every request line with a fixed document.
    fn echo_harness() -> Option<StdioHarness> {
        if !std::path::Path::new("/bin/sh").exists() {
            return None;
        }
        let script = r#"while IFS= read -r line; do printf '%s\n' '{"status":"ok","stdout":"BUG FOUND\n","exit_code":0}'; done"#;
        Some(StdioHarness::launch(vec!["/bin/sh".into(), "-c".into(), script.into()], 2).unwrap())
    }

    #[test]
    fn strict_alternation_over_a_pool() {
        let Some(h) = echo_harness() else { return };
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..5 {
                        let r = h.execute("print('BUG FOUND')", 5.0).unwrap();
                        assert!(r.bug_found);
                    }
                });
            }
        });
    }

    #[test]
    fn dead_worker_is_reported() {
        if !std::path::Path::new("/bin/sh").exists() {
            return;
        }
        let h =
            StdioHarness::launch(vec!["/bin/sh".into(), "-c".into(), "exit 0".into()], 1).unwrap();
        let err = h.call(&HarnessRequest::instrument("a = 1")).unwrap_err();
        assert!(matches!(err, Error::Harness(_)));
    }

    #[test]
    fn missing_binary_is_a_launch_error() {
        assert!(StdioHarness::launch(vec!["/nonexistent/harness".into()], 1).is_err());
        assert!(StdioHarness::launch(vec![], 1).is_err());
    }
}
