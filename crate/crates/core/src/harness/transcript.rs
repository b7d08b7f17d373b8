use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Action, Harness, HarnessRequest, HarnessResponse};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::llm::sha256_hex;

/// One line of harness.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub action: Action,
    /// SHA-256 of the program (or library ref for catalogs).
    pub subject_sha256: String,
    pub response: HarnessResponse,
}

impl TranscriptEntry {
    pub fn new(request: &HarnessRequest, response: HarnessResponse) -> Self {
        TranscriptEntry {
            action: request.action,
            subject_sha256: sha256_hex(request.subject()),
            response,
        }
    }
}

/// Mock harness answering from recorded responses.
#[derive(Debug, Default)]
pub struct TranscriptHarness {
    entries: BTreeMap<(Action, String), HarnessResponse>,
}

impl TranscriptHarness {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut t = TranscriptHarness::new();
        for (line, e) in jsonl::read::<TranscriptEntry>(path)? {
            let key = (e.action, e.subject_sha256);
            if t.entries.insert(key.clone(), e.response).is_some() {
                let dup = format!("{}/{}", key.0, key.1);
                return Err(Error::malformed(path, line, Error::DuplicateKey(dup)));
            }
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<TranscriptEntry> = self
            .entries
            .iter()
            .map(|((action, sha), response)| TranscriptEntry {
                action: *action,
                subject_sha256: sha.clone(),
                response: response.clone(),
            })
            .collect();
        jsonl::write(path, &entries)
    }

    /// Later inserts for the same request replace earlier ones.
    pub fn insert(&mut self, request: &HarnessRequest, response: HarnessResponse) {
        let e = TranscriptEntry::new(request, response);
        self.entries
            .insert((e.action, e.subject_sha256), e.response);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Harness for TranscriptHarness {
    fn call(&self, request: &HarnessRequest) -> Result<HarnessResponse> {
        let key = (request.action, sha256_hex(request.subject()));
        self.entries
            .get(&key)
            .cloned()
            .ok_or_else(|| Error::Harness(format!("no transcript entry for {}/{}", key.0, key.1)))
    }
}

/// Forwards to a live harness and appends every exchange to a transcript file.
/// A request seen before is forwarded again but not appended twice.
pub struct RecordingHarness<H> {
    inner: H,
    path: PathBuf,
    seen: Mutex<BTreeSet<(Action, String)>>,
}

impl<H: Harness> RecordingHarness<H> {
    pub fn new(inner: H, path: impl Into<PathBuf>) -> Self {
        RecordingHarness {
            inner,
            path: path.into(),
            seen: Mutex::new(BTreeSet::new()),
        }
    }
}

impl<H: Harness> Harness for RecordingHarness<H> {
    fn call(&self, request: &HarnessRequest) -> Result<HarnessResponse> {
        let response = self.inner.call(request)?;
        let entry = TranscriptEntry::new(request, response.clone());
        let mut seen = self.seen.lock().unwrap();
        if seen.insert((entry.action, entry.subject_sha256.clone())) {
            jsonl::append(&self.path, &entry)?;
        }
        Ok(response)
    }
}
