use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::llm::EmbeddingVector;

/// Cosine of two raw vectors, clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    cosine(&u.values, &v.values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DbLine {
    qualified_name: String,
    model_id: String,
    values: Vec<f64>,
}

/// All API embeddings, held in memory. Every vector has the same dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingDb {
    vectors: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.values().next().map(|v| v.dim())
    }

    pub fn insert(&mut self, qualified_name: &str, vector: EmbeddingVector) -> Result<()> {
        if let Some(expected) = self.dim() {
            if vector.dim() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual: vector.dim(),
                });
            }
        }
        self.vectors.insert(qualified_name.to_string(), vector);
        Ok(())
    }

    pub fn get(&self, qualified_name: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(qualified_name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &EmbeddingVector)> {
        self.vectors.iter()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut db = EmbeddingDb::new();
        for (line, l) in jsonl::read::<DbLine>(path)? {
            if db.vectors.contains_key(&l.qualified_name) {
                return Err(Error::malformed(
                    path,
                    line,
                    Error::DuplicateKey(l.qualified_name),
                ));
            }
            db.insert(
                &l.qualified_name,
                EmbeddingVector::new(l.model_id, l.values),
            )
            .map_err(|e| Error::malformed(path, line, e))?;
        }
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let lines: Vec<DbLine> = self
            .vectors
            .iter()
            .map(|(name, v)| DbLine {
                qualified_name: name.clone(),
                model_id: v.model_id.clone(),
                values: v.values.clone(),
            })
            .collect();
        jsonl::write(path, &lines)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub api: String,
    pub score: f64,
}

/// APIs ranked by similarity to an anchor, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarApiQueue {
    pub anchor_api: String,
    pub entries: Vec<QueueEntry>,
    pub capacity: usize,
}

impl SimilarApiQueue {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ranked API names, anchor excluded.
    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .map(|e| e.api.as_str())
            .filter(move |a| *a != self.anchor_api)
    }
}

/// Score descending, then name ascending.
pub(crate) fn rank(a: &QueueEntry, b: &QueueEntry) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.api.cmp(&b.api))
}

/// Top-`k` APIs of `db` by cosine to `anchor`. The anchor's own entry, if
/// present, stays in the queue; callers skip it via [`SimilarApiQueue::targets`].
pub fn similar_queue(
    anchor_api: &str,
    anchor: &EmbeddingVector,
    db: &EmbeddingDb,
    k: usize,
) -> Result<SimilarApiQueue> {
    if k == 0 {
        return Err(Error::InvalidRequest(
            "queue capacity must be at least 1".into(),
        ));
    }
    let mut entries = db
        .iter()
        .map(|(name, v)| {
            Ok(QueueEntry {
                api: name.clone(),
                score: cosine_similarity(anchor, v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(rank);
    entries.truncate(k);
    Ok(SimilarApiQueue {
        anchor_api: anchor_api.to_string(),
        entries,
        capacity: k,
    })
}
