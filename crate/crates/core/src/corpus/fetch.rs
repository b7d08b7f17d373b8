//! Issue/PR sources: a fixture directory and a minimal GitHub REST client.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Comment, IssueRecord, PullRequestRecord};
use crate::error::{Error, Result};

/// One page of an issue listing.
#[derive(Debug, Clone, Default)]
pub struct IssuePage {
    pub issues: Vec<IssueRecord>,
    /// PR numbers seen in the listing (GitHub lists PRs as issues).
    pub pull_numbers: Vec<u64>,
    /// Cursor of the following page, if any.
    pub next: Option<String>,
}

pub trait IssueSource {
    fn list_issues(&self, repo: &str, cursor: Option<&str>) -> Result<IssuePage>;

    fn get_pull_request(&self, repo: &str, number: u64) -> Result<Option<PullRequestRecord>>;
}

/// Offline source: `issues/*.json` and `prs/*.json`, one record per file.
///
/// Files may omit `repo`; it is filled from the requested repository.
#[derive(Debug, Clone)]
pub struct FixtureSource {
    root: PathBuf,
}

impl FixtureSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FixtureSource { root: root.into() }
    }

    fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        Ok(files)
    }

    fn read<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.line(), e))
    }
}

#[derive(Deserialize)]
struct FixtureIssue {
    #[serde(default)]
    repo: Option<String>,
    number: u64,
    title: String,
    #[serde(default)]
    body: String,
    #[serde(default)]
    labels: Vec<String>,
    #[serde(default)]
    comments: Vec<Comment>,
    #[serde(default)]
    linked_pr_numbers: Vec<u64>,
}

#[derive(Deserialize)]
struct FixturePr {
    #[serde(default)]
    repo: Option<String>,
    number: u64,
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    diff_text: String,
    #[serde(default)]
    changed_files: Vec<String>,
}

impl IssueSource for FixtureSource {
    fn list_issues(&self, repo: &str, _cursor: Option<&str>) -> Result<IssuePage> {
        if !self.root.is_dir() {
            return Err(Error::Network(format!(
                "fixture directory {} not found",
                self.root.display()
            )));
        }
        let mut page = IssuePage::default();
        for path in Self::json_files(&self.root.join("issues"))? {
            let raw: FixtureIssue = Self::read(&path)?;
            page.issues.push(IssueRecord {
                repo: raw.repo.unwrap_or_else(|| repo.to_string()),
                number: raw.number,
                title: raw.title,
                body: raw.body,
                labels: raw.labels,
                comments: raw.comments,
                linked_pr_numbers: raw.linked_pr_numbers,
            });
        }
        for path in Self::json_files(&self.root.join("prs"))? {
            let raw: FixturePr = Self::read(&path)?;
            page.pull_numbers.push(raw.number);
        }
        Ok(page)
    }

    fn get_pull_request(&self, repo: &str, number: u64) -> Result<Option<PullRequestRecord>> {
        for path in Self::json_files(&self.root.join("prs"))? {
            let raw: FixturePr = Self::read(&path)?;
            if raw.number == number {
                return Ok(Some(PullRequestRecord {
                    repo: raw.repo.unwrap_or_else(|| repo.to_string()),
                    number: raw.number,
                    title: raw.title,
                    description: raw.description,
                    diff_text: raw.diff_text,
                    changed_files: raw.changed_files,
                }));
            }
        }
        Ok(None)
    }
}

/// GitHub REST v3 reads with a token from the environment.
pub struct GithubSource {
    agent: ureq::Agent,
    api_base: String,
    token: Option<String>,
    state: String,
}

impl GithubSource {
    pub fn new(api_base: impl Into<String>, token_env: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        GithubSource {
            agent,
            api_base: api_base.into().trim_end_matches('/').to_string(),
            token: std::env::var(token_env).ok(),
            state: "closed".into(),
        }
    }

    fn get(&self, path: &str, accept: &str, cursor: &str) -> Result<Option<String>> {
        let url = format!("{}{}", self.api_base, path);
        let mut req = self
            .agent
            .get(&url)
            .header("Accept", accept)
            .header("User-Agent", "xferfuzz");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.call().map_err(|e| Error::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let exhausted = resp
            .headers()
            .get("x-ratelimit-remaining")
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v == "0");
        if status == 429 || (status == 403 && exhausted) {
            return Err(Error::RateLimited {
                cursor: cursor.to_string(),
            });
        }
        if status == 404 {
            return Ok(None);
        }
        if !(200..300).contains(&status) {
            return Err(Error::Network(format!("GET {url}: HTTP {status}")));
        }
        resp.body_mut()
            .read_to_string()
            .map(Some)
            .map_err(|e| Error::Network(e.to_string()))
    }
}

#[derive(Deserialize)]
struct GhLabel {
    name: String,
}

#[derive(Deserialize)]
struct GhUser {
    login: String,
}

#[derive(Deserialize)]
struct GhIssue {
    number: u64,
    title: String,
    #[serde(default)]
    body: Option<String>,
    #[serde(default)]
    labels: Vec<GhLabel>,
    #[serde(default)]
    pull_request: Option<serde_json::Value>,
    #[serde(default)]
    comments: u64,
}

#[derive(Deserialize)]
struct GhComment {
    user: Option<GhUser>,
    #[serde(default)]
    body: Option<String>,
}

#[derive(Deserialize)]
struct GhPull {
    number: u64,
    title: String,
    #[serde(default)]
    body: Option<String>,
}

#[derive(Deserialize)]
struct GhFile {
    filename: String,
}

impl IssueSource for GithubSource {
    fn list_issues(&self, repo: &str, cursor: Option<&str>) -> Result<IssuePage> {
        let page_no: u64 = cursor.and_then(|c| c.parse().ok()).unwrap_or(1);
        let cursor_str = page_no.to_string();
        let path = format!(
            "/repos/{repo}/issues?state={}&per_page=100&page={page_no}",
            self.state
        );
        let Some(body) = self.get(&path, "application/vnd.github+json", &cursor_str)? else {
            return Err(Error::Network(format!("repository {repo} not found")));
        };
        let items: Vec<GhIssue> = serde_json::from_str(&body)?;
        let mut page = IssuePage {
            next: (items.len() == 100).then(|| (page_no + 1).to_string()),
            ..Default::default()
        };
        for item in items {
            if item.pull_request.is_some() {
                page.pull_numbers.push(item.number);
                continue;
            }
            let mut comments = Vec::new();
            if item.comments > 0 {
                let cpath = format!("/repos/{repo}/issues/{}/comments?per_page=100", item.number);
                if let Some(cbody) = self.get(&cpath, "application/vnd.github+json", &cursor_str)? {
                    let raw: Vec<GhComment> = serde_json::from_str(&cbody)?;
                    comments = raw
                        .into_iter()
                        .map(|c| Comment {
                            author: c.user.map(|u| u.login).unwrap_or_default(),
                            text: c.body.unwrap_or_default(),
                        })
                        .collect();
                }
            }
            page.issues.push(IssueRecord {
                repo: repo.to_string(),
                number: item.number,
                title: item.title,
                body: item.body.unwrap_or_default(),
                labels: item.labels.into_iter().map(|l| l.name).collect(),
                comments,
                linked_pr_numbers: Vec::new(),
            });
        }
        Ok(page)
    }

    fn get_pull_request(&self, repo: &str, number: u64) -> Result<Option<PullRequestRecord>> {
        let cursor = format!("pr:{number}");
        let Some(body) = self.get(
            &format!("/repos/{repo}/pulls/{number}"),
            "application/vnd.github+json",
            &cursor,
        )?
        else {
            return Ok(None);
        };
        let pr: GhPull = serde_json::from_str(&body)?;
        let diff_text = self
            .get(
                &format!("/repos/{repo}/pulls/{number}"),
                "application/vnd.github.diff",
                &cursor,
            )?
            .unwrap_or_default();
        let files: Vec<GhFile> = match self.get(
            &format!("/repos/{repo}/pulls/{number}/files?per_page=100"),
            "application/vnd.github+json",
            &cursor,
        )? {
            Some(b) => serde_json::from_str(&b)?,
            None => Vec::new(),
        };
        Ok(Some(PullRequestRecord {
            repo: repo.to_string(),
            number: pr.number,
            title: pr.title,
            description: pr.body.unwrap_or_default(),
            diff_text,
            changed_files: files.into_iter().map(|f| f.filename).collect(),
        }))
    }
}
