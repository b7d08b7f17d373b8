use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use xferfuzz_core::corpus::{
    ingest_repo, load_corpus, select_fixed_issues, CorpusStore, FixtureSource, GithubSource,
    IssueSource,
};
use xferfuzz_core::fuzz::{is_candidate, Campaign, HaltReason};
use xferfuzz_core::matcher::{
    build_catalog, build_triplets, describe_api, embed_descriptions, load_descriptions,
    load_triplets, pilot_analysis, save_descriptions, Catalog,
};
use xferfuzz_core::pattern::{extract_pattern, PatternStore};
use xferfuzz_core::report::{campaign_dirs, emit_report, CampaignSnapshot};
use xferfuzz_core::validate::{append_verdict, Candidate, Validator};
use xferfuzz_core::{Error, ExecutionResult, IssueRecord, TransferredTest, ValidationVerdict};

use crate::workspace::{with_gateway, Workspace};
use crate::Status;

pub fn ingest(
    ws: &Workspace,
    repos: Vec<String>,
    fixtures: Option<PathBuf>,
    resume_from: Option<String>,
) -> anyhow::Result<Status> {
    let repos = if repos.is_empty() {
        ws.config.github.repos.clone()
    } else {
        repos
    };
    if repos.is_empty() {
        bail!("no repository given and none configured");
    }
    let source: Box<dyn IssueSource> = match fixtures {
        Some(dir) => Box::new(FixtureSource::new(dir)),
        None => Box::new(GithubSource::new(
            ws.config.github.api_base.clone(),
            &ws.config.github.token_env,
        )),
    };
    let store = CorpusStore::new(&ws.out);
    let mut corpus = None;
    for repo in &repos {
        match ingest_repo(repo, source.as_ref(), &store, resume_from.as_deref()) {
            Ok(c) => corpus = Some(c),
            Err(Error::RateLimited { cursor }) => {
                bail!("rate limited while fetching {repo}; rerun with --resume-from {cursor}")
            }
            Err(e) => return Err(e.into()),
        }
    }
    let corpus = corpus.expect("at least one repository");
    println!(
        "{} issues, {} pull requests, {} fixed issues",
        corpus.issues().count(),
        corpus.pull_requests().count(),
        select_fixed_issues(&corpus).len()
    );
    Ok(Status::Clean)
}

pub fn catalog(ws: &Workspace, library: Option<String>) -> anyhow::Result<Status> {
    let library = library.unwrap_or_else(|| ws.config.harness.library_ref.clone());
    let harness = ws.harness()?;
    let catalog = build_catalog(harness.as_ref(), &library)?;
    catalog.save(&ws.path("catalog.jsonl"))?;
    println!("{} APIs in {library}", catalog.len());
    Ok(Status::Clean)
}

pub fn describe(ws: &Workspace) -> anyhow::Result<Status> {
    let catalog = Catalog::load(&ws.path("catalog.jsonl")).context("run `catalog` first")?;
    let path = ws.path("descriptions.jsonl");
    let mut descriptions = if path.exists() {
        load_descriptions(&path)?
    } else {
        Default::default()
    };
    let before = descriptions.len();
    let result = with_gateway(ws, |gateway| {
        for record in catalog.records() {
            if !descriptions.contains_key(&record.qualified_name) {
                let d = describe_api(record, gateway)?;
                descriptions.insert(d.api.clone(), d);
            }
        }
        Ok(())
    });
    // Keep whatever was described before a failure.
    save_descriptions(&path, &descriptions)?;
    result?;
    println!(
        "{} descriptions ({} new)",
        descriptions.len(),
        descriptions.len() - before
    );
    Ok(Status::Clean)
}

pub fn embed(ws: &Workspace) -> anyhow::Result<Status> {
    let descriptions =
        load_descriptions(&ws.path("descriptions.jsonl")).context("run `describe` first")?;
    let batch = ws.config.llm.embedding_batch;
    let db = with_gateway(ws, |gateway| {
        Ok(embed_descriptions(descriptions.values(), gateway, batch)?)
    })?;
    db.save(&ws.path("embeddings.jsonl"))?;
    println!(
        "{} embeddings of dimension {}",
        db.len(),
        db.dim().unwrap_or(0)
    );
    Ok(Status::Clean)
}

pub fn pilot(ws: &Workspace, triplets: Option<PathBuf>) -> anyhow::Result<Status> {
    let triplets = match triplets {
        Some(path) => load_triplets(&path)?,
        None => {
            let patterns: Vec<_> = PatternStore::load(&ws.path("patterns.jsonl"))?
                .iter()
                .cloned()
                .collect();
            let db = ws.matcher()?.db;
            with_gateway(ws, |gateway| Ok(build_triplets(&patterns, &db, gateway)?))?
        }
    };
    let result = pilot_analysis(&triplets)?;
    result.write_pairs_csv(&ws.path("pairs.csv"))?;
    result.write_summary_json(&ws.path("summary.json"))?;
    println!(
        "{} triplets, {} pairs, r = {:.4}, p = {:.3e}",
        triplets.len(),
        result.pairs.len(),
        result.pearson_r,
        result.p_value
    );
    Ok(Status::Clean)
}

fn campaign_dir(ws: &Workspace, issue: &IssueRecord) -> PathBuf {
    let slug: String = issue
        .repo
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    ws.path("campaigns")
        .join(format!("{slug}-{}", issue.number))
}

/// Extracts the missing patterns, then runs or continues one campaign per
/// pattern. Stops early when the budget runs out.
pub fn fuzz(ws: &Workspace, only: &[u64]) -> anyhow::Result<Status> {
    let corpus = load_corpus(&ws.out).context("run `ingest` first")?;
    let fixed: Vec<_> = select_fixed_issues(&corpus)
        .into_iter()
        .filter(|(i, _)| only.is_empty() || only.contains(&i.number))
        .collect();
    if fixed.is_empty() {
        bail!("no fixed issues to fuzz");
    }
    let config = ws.campaign_config()?;
    let matcher = ws.matcher()?;
    let harness = ws.harness()?;
    let patterns_path = ws.path("patterns.jsonl");
    let mut patterns = PatternStore::load(&patterns_path)?;

    with_gateway(ws, |gateway| {
        let validator = Validator::new(gateway, ws.config.validator_config());
        for (issue, pr) in &fixed {
            let pattern = match patterns.get(&issue.issue_ref()) {
                Some(p) => p.clone(),
                None => match extract_pattern(issue, pr, gateway) {
                    Ok(p) => {
                        patterns.upsert(p.clone());
                        patterns.save(&patterns_path)?;
                        p
                    }
                    Err(e) if e.is_budget() => {
                        log::warn!("budget exhausted before extracting {}", issue.issue_ref());
                        break;
                    }
                    Err(
                        e @ (Error::Unparseable { .. }
                        | Error::MissingField(_)
                        | Error::UnknownCategory(_)),
                    ) => {
                        log::warn!("{}: no usable pattern ({e})", issue.issue_ref());
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                },
            };
            let dir = campaign_dir(ws, issue);
            let campaign = Campaign::new(
                issue,
                &matcher,
                gateway,
                harness.as_ref(),
                &validator,
                config.clone(),
            )
            .with_dir(&dir)
            .with_refs(ws.refs());
            let snapshot = dir.join(CampaignSnapshot::FILE_NAME);
            let state = if snapshot.exists() {
                CampaignSnapshot::load(&snapshot)?.state
            } else {
                campaign.start(&pattern)?
            };
            let state = campaign.run(state)?;
            println!(
                "{}: {} tests, {} findings, {:?}",
                issue.issue_ref(),
                state.log.len(),
                state.findings.len(),
                state.halted
            );
            if state.halted == Some(HaltReason::Budget) {
                log::warn!("budget exhausted; rerun `resume` with a larger --budget");
                break;
            }
        }
        Ok(())
    })?;
    report(ws)
}

fn snapshot_dir(path: PathBuf) -> PathBuf {
    if path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path
    }
}

/// Continues every named (or every unfinished) campaign from its snapshot.
pub fn resume(ws: &Workspace, snapshots: Vec<PathBuf>) -> anyhow::Result<Status> {
    let explicit = !snapshots.is_empty();
    let dirs: Vec<PathBuf> = if explicit {
        snapshots.into_iter().map(snapshot_dir).collect()
    } else {
        campaign_dirs(&ws.out)
    };
    let mut loaded = Vec::new();
    for dir in dirs {
        let path = dir.join(CampaignSnapshot::FILE_NAME);
        let snap =
            CampaignSnapshot::load(&path).with_context(|| format!("loading {}", path.display()))?;
        let unfinished = snap.state.halted.as_ref().is_none_or(|h| h.is_resumable());
        if unfinished || explicit {
            check_refs(ws, &snap, &path)?;
            loaded.push((dir, snap));
        }
    }
    if loaded.is_empty() {
        println!("nothing to resume");
        return report(ws);
    }
    let matcher = ws.matcher()?;
    let harness = ws.harness()?;
    with_gateway(ws, |gateway| {
        let validator = Validator::new(gateway, ws.config.validator_config());
        for (dir, snap) in &loaded {
            let campaign = Campaign::new(
                &snap.issue,
                &matcher,
                gateway,
                harness.as_ref(),
                &validator,
                snap.config.clone(),
            )
            .with_dir(dir)
            .with_refs(snap.refs.clone());
            let state = campaign.run(snap.state.clone())?;
            println!(
                "{}: {} tests, {} findings, {:?}",
                snap.issue.issue_ref(),
                state.log.len(),
                state.findings.len(),
                state.halted
            );
            if state.halted == Some(HaltReason::Budget) {
                break;
            }
        }
        Ok(())
    })?;
    report(ws)
}

/// Replaying a campaign against a cassette other than the one it was
/// recorded with would silently mix two runs.
fn check_refs(ws: &Workspace, snap: &CampaignSnapshot, path: &Path) -> anyhow::Result<()> {
    let current = ws.refs().cassette;
    if let (Some(recorded), Some(current)) = (&snap.refs.cassette, &current) {
        if recorded.exists() && current.exists() && !same_file(recorded, current)? && ws.is_replay()
        {
            bail!(
                "{} was recorded with {} but --replay serves {}",
                path.display(),
                recorded.display(),
                current.display()
            );
        }
    }
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> anyhow::Result<bool> {
    if fs::canonicalize(a)? == fs::canonicalize(b)? {
        return Ok(true);
    }
    Ok(fs::read(a)? == fs::read(b)?)
}

pub fn report(ws: &Workspace) -> anyhow::Result<Status> {
    let summary = emit_report(&ws.out)?;
    for p in &summary.problems {
        eprintln!("warning: {p}");
    }
    println!(
        "{} campaigns, {} tests, {} findings; wrote {} and {}",
        summary.campaigns,
        summary.tests,
        summary.findings.len(),
        ws.path("findings.jsonl").display(),
        ws.path("report.md").display()
    );
    Ok(Status::from_findings(summary.findings.len()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Re-validates every recorded candidate and rewrites `verdicts.jsonl`.
pub fn validate(ws: &Workspace, campaigns: Vec<PathBuf>) -> anyhow::Result<Status> {
    let dirs = if campaigns.is_empty() {
        campaign_dirs(&ws.out)
    } else {
        campaigns
    };
    if dirs.is_empty() {
        bail!("no campaigns under {}", ws.out.display());
    }
    let out = ws.path("verdicts.jsonl");
    if out.exists() {
        fs::remove_file(&out).with_context(|| format!("replacing {}", out.display()))?;
    }
    let (total, passed) = with_gateway(ws, |gateway| {
        let validator = Validator::new(gateway, ws.config.validator_config());
        let (mut total, mut passed) = (0, 0);
        for dir in &dirs {
            let snap = CampaignSnapshot::load(&dir.join(CampaignSnapshot::FILE_NAME))?;
            for test_dir in test_dirs(dir)? {
                let test: TransferredTest = read_json(&test_dir.join("test.json"))?;
                let execution: ExecutionResult = read_json(&test_dir.join("execution.json"))?;
                if !is_candidate(&test, &execution) {
                    continue;
                }
                let verdict = revalidate(&validator, &snap, &test, &execution);
                if verdict.incomplete {
                    bail!("{}: {}", test_dir.display(), verdict.reason);
                }
                fs::write(
                    test_dir.join("verdict.json"),
                    serde_json::to_string_pretty(&verdict)?,
                )?;
                append_verdict(&out, &verdict)?;
                total += 1;
                passed += usize::from(verdict.r#final);
            }
        }
        Ok((total, passed))
    })?;
    println!(
        "{total} candidates, {passed} confirmed; wrote {}",
        out.display()
    );
    Ok(Status::from_findings(passed))
}

fn revalidate(
    validator: &Validator<'_>,
    snap: &CampaignSnapshot,
    test: &TransferredTest,
    execution: &ExecutionResult,
) -> ValidationVerdict {
    validator.validate_candidate(&Candidate {
        issue: &snap.issue,
        pattern: &snap.state.pattern,
        original_trace: &snap.state.original_trace,
        test,
        execution,
    })
}

fn test_dirs(campaign: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let root = campaign.join("tests");
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("test.json").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}
