//! API catalog, functional descriptions, embedding similarity and the
//! pilot correlation analysis.

mod pilot;
mod similarity;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use pilot::{
    build_triplets, load_triplets, pearson, pilot_analysis, Bin, PilotResult, PilotTriplet,
    BIN_WIDTH,
};
pub use similarity::{
    cosine, cosine_similarity, similar_queue, EmbeddingDb, QueueEntry, SimilarApiQueue,
};

use crate::error::{Error, Result};
use crate::harness::Harness;
use crate::jsonl;
use crate::llm::{Gateway, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    /// Declared kind, e.g. `positional_or_keyword`, `var_positional`.
    #[serde(default)]
    pub kind: String,
    #[serde(default)]
    pub has_default: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiRecord {
    pub qualified_name: String,
    pub module_path: String,
    #[serde(default)]
    pub signature_params: Vec<Param>,
    #[serde(default)]
    pub doc_text: String,
}

impl ApiRecord {
    pub fn new(qualified_name: &str) -> Self {
        let module_path = qualified_name
            .rsplit_once('.')
            .map(|(m, _)| m)
            .unwrap_or("")
            .to_string();
        ApiRecord {
            qualified_name: qualified_name.to_string(),
            module_path,
            signature_params: Vec::new(),
            doc_text: String::new(),
        }
    }

    /// Python-style signature text, e.g. `torch.clamp(input, min=..., *args)`.
    pub fn signature(&self) -> String {
        let mut out = format!("{}(", self.qualified_name);
        for (i, p) in self.signature_params.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            match p.kind.as_str() {
                "var_positional" => out.push('*'),
                "var_keyword" => out.push_str("**"),
                _ => {}
            }
            out.push_str(&p.name);
            if p.has_default {
                out.push_str("=...");
            }
        }
        out.push(')');
        out
    }
}

/// A deduplicated API catalog in scan order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    records: Vec<ApiRecord>,
    index: BTreeMap<String, usize>,
}

impl Catalog {
    /// Keeps the first record for each qualified name.
    pub fn from_records(records: impl IntoIterator<Item = ApiRecord>) -> Self {
        let mut c = Catalog::default();
        for r in records {
            if r.qualified_name.is_empty() || c.index.contains_key(&r.qualified_name) {
                continue;
            }
            c.index.insert(r.qualified_name.clone(), c.records.len());
            c.records.push(r);
        }
        c
    }

    pub fn get(&self, qualified_name: &str) -> Option<&ApiRecord> {
        self.index.get(qualified_name).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[ApiRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Catalog::default();
        for (line, r) in jsonl::read::<ApiRecord>(path)? {
            if c.index.contains_key(&r.qualified_name) {
                return Err(Error::malformed(
                    path,
                    line,
                    Error::DuplicateKey(r.qualified_name),
                ));
            }
            c.index.insert(r.qualified_name.clone(), c.records.len());
            c.records.push(r);
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write(path, &self.records)
    }
}

/// Scans `library_ref` through the harness.
pub fn build_catalog(harness: &dyn Harness, library_ref: &str) -> Result<Catalog> {
    let records = harness.catalog(library_ref)?;
    let scanned = records.len();
    let catalog = Catalog::from_records(records);
    if catalog.len() != scanned {
        log::info!(
            "catalog: dropped {} duplicate record(s)",
            scanned - catalog.len()
        );
    }
    Ok(catalog)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalDescription {
    pub api: String,
    pub description_text: String,
}

/// Asks for a context-free description of what `record` does.
pub fn describe_api(record: &ApiRecord, gateway: &Gateway) -> Result<FunctionalDescription> {
    let signature = record.signature();
    let doc = if record.doc_text.trim().is_empty() {
        "(no documentation)"
    } else {
        record.doc_text.as_str()
    };
    let slots = [
        ("qualified_name", record.qualified_name.as_str()),
        ("module_path", record.module_path.as_str()),
        ("signature", signature.as_str()),
        ("doc_text", doc),
    ];
    let text = gateway.ask(TemplateId::FunctionalDescription, &slots, 0, |text| {
        let t = text.trim();
        if t.is_empty() {
            Err(Error::Unparseable {
                template: TemplateId::FunctionalDescription.to_string(),
                message: "empty description".into(),
            })
        } else {
            Ok(t.to_string())
        }
    })?;
    Ok(FunctionalDescription {
        api: record.qualified_name.clone(),
        description_text: text,
    })
}

/// Reads descriptions.jsonl into a name-keyed map.
pub fn load_descriptions(path: &Path) -> Result<BTreeMap<String, FunctionalDescription>> {
    let mut out = BTreeMap::new();
    for (line, d) in jsonl::read_or_empty::<FunctionalDescription>(path)? {
        if out.contains_key(&d.api) {
            return Err(Error::malformed(path, line, Error::DuplicateKey(d.api)));
        }
        out.insert(d.api.clone(), d);
    }
    Ok(out)
}

pub fn save_descriptions(
    path: &Path,
    descriptions: &BTreeMap<String, FunctionalDescription>,
) -> Result<()> {
    jsonl::write(path, descriptions.values())
}

/// Embeds every description in batches and collects them into a database.
pub fn embed_descriptions<'a>(
    descriptions: impl IntoIterator<Item = &'a FunctionalDescription>,
    gateway: &Gateway,
    batch_size: usize,
) -> Result<EmbeddingDb> {
    let all: Vec<&FunctionalDescription> = descriptions.into_iter().collect();
    let mut db = EmbeddingDb::new();
    for chunk in all.chunks(batch_size.max(1)) {
        let texts: Vec<String> = chunk.iter().map(|d| d.description_text.clone()).collect();
        for (d, v) in chunk.iter().zip(gateway.embed(&texts)?) {
            db.insert(&d.api, v)?;
        }
    }
    Ok(db)
}

/// What the fuzz engine needs from the matcher: similarity queries and
/// record lookup.
pub trait ApiIndex: Sync {
    /// The top-`k` queue around `api`'s own embedding, or `None` when `api`
    /// has no embedding.
    fn similar(&self, api: &str, k: usize) -> Result<Option<SimilarApiQueue>>;

    fn record(&self, api: &str) -> Option<ApiRecord>;
}

/// Catalog plus embedding database.
#[derive(Debug, Clone, Default)]
pub struct Matcher {
    pub catalog: Catalog,
    pub db: EmbeddingDb,
}

impl Matcher {
    pub fn new(catalog: Catalog, db: EmbeddingDb) -> Self {
        Matcher { catalog, db }
    }
}

impl ApiIndex for Matcher {
    fn similar(&self, api: &str, k: usize) -> Result<Option<SimilarApiQueue>> {
        match self.db.get(api) {
            Some(anchor) => similar_queue(api, anchor, &self.db, k).map(Some),
            None => Ok(None),
        }
    }

    fn record(&self, api: &str) -> Option<ApiRecord> {
        self.catalog.get(api).cloned().or_else(|| {
            // Embedded but not cataloged, e.g. a hand-added anchor.
            self.db.get(api).map(|_| ApiRecord::new(api))
        })
    }
}
