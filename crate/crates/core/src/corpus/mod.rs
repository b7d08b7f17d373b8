//! Issue/PR corpus: ingestion, persistence, and fix-linked selection.

mod fetch;
pub mod link;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use fetch::{FixtureSource, GithubSource, IssuePage, IssueSource};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IssueRef {
    pub repo: String,
    pub number: u64,
}

impl IssueRef {
    pub fn new(repo: impl Into<String>, number: u64) -> Self {
        IssueRef {
            repo: repo.into(),
            number,
        }
    }

    /// Filesystem-safe form, e.g. `pytorch_pytorch-132303`.
    pub fn slug(&self) -> String {
        format!(
            "{}-{}",
            self.repo.replace(['/', '\\', ' '], "_"),
            self.number
        )
    }
}

impl fmt::Display for IssueRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.repo, self.number)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub author: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub repo: String,
    pub number: u64,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub comments: Vec<Comment>,
    #[serde(default)]
    pub linked_pr_numbers: Vec<u64>,
}

impl IssueRecord {
    pub fn issue_ref(&self) -> IssueRef {
        IssueRef::new(&self.repo, self.number)
    }

    /// Title, body and discussion as one prompt-ready text.
    pub fn full_text(&self) -> String {
        let mut out = format!(
            "Issue {}#{}: {}\n\n{}",
            self.repo, self.number, self.title, self.body
        );
        if !self.comments.is_empty() {
            out.push_str("\n\nComments:");
            for c in &self.comments {
                out.push_str(&format!("\n[{}] {}", c.author, c.text));
            }
        }
        out
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.number == 0 {
            return Err("issue number must be positive".into());
        }
        let unique: BTreeSet<_> = self.linked_pr_numbers.iter().collect();
        if unique.len() != self.linked_pr_numbers.len() {
            return Err(format!(
                "issue {} has duplicate linked PR numbers",
                self.issue_ref()
            ));
        }
        if self.linked_pr_numbers.contains(&0) {
            return Err(format!("issue {} links PR #0", self.issue_ref()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PullRequestRecord {
    pub repo: String,
    pub number: u64,
    pub title: String,
    pub description: String,
    pub diff_text: String,
    #[serde(default)]
    pub changed_files: Vec<String>,
}

impl PullRequestRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.number == 0 {
            return Err("PR number must be positive".into());
        }
        if self.diff_text.is_empty() && !self.changed_files.is_empty() {
            return Err(format!(
                "PR {}#{} changes files but has no diff",
                self.repo, self.number
            ));
        }
        Ok(())
    }
}

type Key = (String, u64);

/// Issues and PRs keyed by `(repo, number)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    issues: BTreeMap<Key, IssueRecord>,
    prs: BTreeMap<Key, PullRequestRecord>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn issues(&self) -> impl Iterator<Item = &IssueRecord> {
        self.issues.values()
    }

    pub fn pull_requests(&self) -> impl Iterator<Item = &PullRequestRecord> {
        self.prs.values()
    }

    pub fn issue(&self, repo: &str, number: u64) -> Option<&IssueRecord> {
        self.issues.get(&(repo.to_string(), number))
    }

    pub fn pull_request(&self, repo: &str, number: u64) -> Option<&PullRequestRecord> {
        self.prs.get(&(repo.to_string(), number))
    }

    pub fn issue_count(&self) -> usize {
        self.issues.len()
    }

    pub fn pr_count(&self) -> usize {
        self.prs.len()
    }

    /// Inserts or replaces by `(repo, number)`. Existing links are kept.
    pub fn upsert_issue(&mut self, mut issue: IssueRecord) {
        let key = (issue.repo.clone(), issue.number);
        if let Some(old) = self.issues.get(&key) {
            for n in &old.linked_pr_numbers {
                if !issue.linked_pr_numbers.contains(n) {
                    issue.linked_pr_numbers.push(*n);
                }
            }
        }
        dedup_in_order(&mut issue.linked_pr_numbers);
        self.issues.insert(key, issue);
    }

    pub fn upsert_pr(&mut self, pr: PullRequestRecord) {
        self.prs.insert((pr.repo.clone(), pr.number), pr);
    }

    /// Resolves linkage in both directions from issue text and PR descriptions.
    pub fn resolve_links(&mut self) {
        let mut extra: BTreeMap<Key, Vec<u64>> = BTreeMap::new();
        for pr in self.prs.values() {
            for n in link::fixed_issue_refs(&pr.description)
                .into_iter()
                .chain(link::fixed_issue_refs(&pr.title))
            {
                extra
                    .entry((pr.repo.clone(), n))
                    .or_default()
                    .push(pr.number);
            }
        }
        for (key, issue) in self.issues.iter_mut() {
            let mut text = issue.body.clone();
            for c in &issue.comments {
                text.push('\n');
                text.push_str(&c.text);
            }
            issue.linked_pr_numbers.extend(link::fixing_pr_refs(&text));
            if let Some(more) = extra.get(key) {
                issue.linked_pr_numbers.extend(more);
            }
            dedup_in_order(&mut issue.linked_pr_numbers);
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        self.issues.values().try_for_each(IssueRecord::check)?;
        self.prs.values().try_for_each(PullRequestRecord::check)
    }
}

fn dedup_in_order(v: &mut Vec<u64>) {
    let mut seen = BTreeSet::new();
    v.retain(|n| seen.insert(*n));
}

/// Issues with a linked PR present in the corpus, each paired with its most
/// recent (highest-numbered) linked PR.
pub fn select_fixed_issues(corpus: &Corpus) -> Vec<(IssueRecord, PullRequestRecord)> {
    corpus
        .issues()
        .filter_map(|issue| {
            issue
                .linked_pr_numbers
                .iter()
                .filter_map(|&n| corpus.pull_request(&issue.repo, n))
                .max_by_key(|pr| pr.number)
                .map(|pr| (issue.clone(), pr.clone()))
        })
        .collect()
}

/// On-disk corpus: `issues.jsonl` and `prs.jsonl` in one directory.
#[derive(Debug, Clone)]
pub struct CorpusStore {
    dir: PathBuf,
}

impl CorpusStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CorpusStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn issues_path(&self) -> PathBuf {
        self.dir.join("issues.jsonl")
    }

    fn prs_path(&self) -> PathBuf {
        self.dir.join("prs.jsonl")
    }

    pub fn save(&self, corpus: &Corpus) -> Result<()> {
        jsonl::write(&self.issues_path(), corpus.issues.values())?;
        jsonl::write(&self.prs_path(), corpus.prs.values())
    }

    /// Loads and re-validates; duplicate `(repo, number)` keys are an error.
    pub fn load(&self) -> Result<Corpus> {
        let mut corpus = Corpus::new();
        let path = self.issues_path();
        for (line, issue) in jsonl::read_or_empty::<IssueRecord>(&path)? {
            let key = (issue.repo.clone(), issue.number);
            issue
                .check()
                .map_err(|m| Error::malformed(&path, line, m))?;
            if corpus.issues.contains_key(&key) {
                return Err(Error::malformed(
                    &path,
                    line,
                    Error::DuplicateKey(format!("{}#{}", key.0, key.1)),
                ));
            }
            corpus.issues.insert(key, issue);
        }
        let path = self.prs_path();
        for (line, pr) in jsonl::read_or_empty::<PullRequestRecord>(&path)? {
            let key = (pr.repo.clone(), pr.number);
            pr.check().map_err(|m| Error::malformed(&path, line, m))?;
            if corpus.prs.contains_key(&key) {
                return Err(Error::malformed(
                    &path,
                    line,
                    Error::DuplicateKey(format!("{}#{}", key.0, key.1)),
                ));
            }
            corpus.prs.insert(key, pr);
        }
        Ok(corpus)
    }
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    if !dir.exists() {
        return Err(Error::io(
            dir,
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ));
    }
    CorpusStore::new(dir).load()
}

/// Fetches every page of `repo` into `store`, updating records in place.
///
/// On a rate-limit signal the records gathered so far are persisted and the
/// [`Error::RateLimited`] cursor can be passed back as `resume_from`.
pub fn ingest_repo(
    repo: &str,
    source: &dyn IssueSource,
    store: &CorpusStore,
    resume_from: Option<&str>,
) -> Result<Corpus> {
    let mut corpus = if store.issues_path().exists() || store.prs_path().exists() {
        store.load()?
    } else {
        Corpus::new()
    };
    let mut cursor = resume_from.map(str::to_string);
    let result = (|| -> Result<()> {
        loop {
            let page = source.list_issues(repo, cursor.as_deref())?;
            let mut wanted: Vec<u64> = page.pull_numbers.clone();
            for issue in page.issues {
                wanted.extend(link::fixing_pr_refs(&issue.body));
                wanted.extend(
                    issue
                        .comments
                        .iter()
                        .flat_map(|c| link::fixing_pr_refs(&c.text)),
                );
                wanted.extend(issue.linked_pr_numbers.iter().copied());
                corpus.upsert_issue(issue);
            }
            dedup_in_order(&mut wanted);
            for n in wanted {
                if corpus.pull_request(repo, n).is_some() {
                    continue;
                }
                if let Some(pr) = source.get_pull_request(repo, n)? {
                    corpus.upsert_pr(pr);
                }
            }
            match page.next {
                Some(next) => cursor = Some(next),
                None => return Ok(()),
            }
        }
    })();
    corpus.resolve_links();
    corpus.validate().map_err(Error::Config)?;
    store.save(&corpus)?;
    result.map(|_| corpus)
}
