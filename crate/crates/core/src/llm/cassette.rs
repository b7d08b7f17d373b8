//! Recorded LLM responses keyed by prompt identity.
//!
//! A cassette file is line-delimited JSON, one [`CassetteEntry`] per line.
//! Keys are `template_id/sha256(rendered_prompt)/epoch`, so renumbering
//! prompts never invalidates a recording while repeated validation epochs
//! still get distinct answers.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::template::TemplateId;
use crate::error::{Error, Result};
use crate::jsonl;

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CassetteKey {
    pub template_id: TemplateId,
    pub prompt_sha256: String,
    pub epoch: u32,
}

impl CassetteKey {
    pub fn new(template_id: TemplateId, rendered_prompt: &str, epoch: u32) -> Self {
        CassetteKey {
            template_id,
            prompt_sha256: sha256_hex(rendered_prompt),
            epoch,
        }
    }
}

impl fmt::Display for CassetteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.template_id, self.prompt_sha256, self.epoch
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub model_id: String,
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// In-memory view of a cassette file, optionally bound to it for appends.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cassette {
    entries: BTreeMap<String, CassetteEntry>,
    path: Option<PathBuf>,
}

impl Cassette {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads `path`; keys must be unique.
    pub fn load(path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (line, entry) in jsonl::read::<CassetteEntry>(path)? {
            if entries.contains_key(&entry.key) {
                return Err(Error::malformed(
                    path,
                    line,
                    Error::DuplicateKey(entry.key.clone()),
                ));
            }
            entries.insert(entry.key.clone(), entry);
        }
        Ok(Cassette {
            entries,
            path: Some(path.to_path_buf()),
        })
    }

    /// Loads `path` if present, otherwise starts empty; appends go to `path`.
    pub fn open_for_recording(path: &Path) -> Result<Self> {
        let mut c = if path.exists() {
            Self::load(path)?
        } else {
            Self::new()
        };
        c.path = Some(path.to_path_buf());
        Ok(c)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CassetteKey) -> Option<&CassetteEntry> {
        self.entries.get(&key.to_string())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CassetteEntry> {
        self.entries.values()
    }

    /// Inserts an entry and, when bound to a file, appends it there.
    pub fn record(&mut self, entry: CassetteEntry) -> Result<()> {
        if self.entries.contains_key(&entry.key) {
            return Err(Error::DuplicateKey(entry.key));
        }
        if let Some(path) = &self.path {
            jsonl::append(path, &entry)?;
        }
        self.entries.insert(entry.key.clone(), entry);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write(path, self.entries.values())
    }
}
