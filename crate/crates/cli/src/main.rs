//! `xferfuzz`: mine fixed issues, match similar APIs, run transfer fuzzing
//! campaigns and report validated findings.

mod commands;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use workspace::Workspace;

#[derive(Debug, Parser)]
#[command(
    name = "xferfuzz",
    version,
    about = "Bug-pattern transfer fuzzing for library APIs"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Serve LLM calls from `<dir>/cassette.jsonl` and, when present,
    /// harness calls from `<dir>/harness.jsonl`.
    #[arg(long, global = true, value_name = "DIR", conflicts_with = "record")]
    replay: Option<PathBuf>,

    /// Call the live provider and harness, appending every exchange to
    /// `cassette.jsonl` and `harness.jsonl` in the output directory.
    #[arg(long, global = true)]
    record: bool,

    /// Spending cap in dollars, e.g. `25.00`.
    #[arg(long, global = true, value_name = "DOLLARS")]
    budget: Option<String>,

    /// APIs tested per campaign round.
    #[arg(long, global = true)]
    window: Option<usize>,

    /// Output directory for every artifact.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fetch issues and their fixing pull requests into issues.jsonl and prs.jsonl.
    Ingest {
        /// Repository as `owner/name`; defaults to the configured list.
        #[arg(long)]
        repo: Vec<String>,
        /// Read `issues/*.json` and `prs/*.json` from this directory instead of GitHub.
        #[arg(long, value_name = "DIR")]
        fixtures: Option<PathBuf>,
        /// Continue after a rate limit from the printed cursor.
        #[arg(long)]
        resume_from: Option<String>,
    },
    /// Enumerate the target library's public APIs into catalog.jsonl.
    Catalog {
        /// Library reference passed to the harness; defaults to the configured one.
        #[arg(long)]
        library: Option<String>,
    },
    /// Write a functional description of each catalogued API to descriptions.jsonl.
    Describe,
    /// Embed the descriptions into embeddings.jsonl.
    Embed,
    /// Correlate functional and context similarity with oracle similarity.
    Pilot {
        /// JSONL triplets; by default they are built from patterns.jsonl.
        #[arg(long, value_name = "FILE")]
        triplets: Option<PathBuf>,
    },
    /// Extract patterns from fixed issues and run one campaign per pattern.
    Fuzz {
        /// Only issues with these numbers.
        #[arg(long)]
        issue: Vec<u64>,
    },
    /// Re-run self-validation over the recorded candidates of each campaign.
    Validate {
        /// Campaign directories; defaults to every campaign under the output directory.
        campaigns: Vec<PathBuf>,
    },
    /// Write findings.jsonl and report.md from the campaigns under the output directory.
    Report,
    /// Continue interrupted campaigns from their snapshots.
    Resume {
        /// Snapshot files or campaign directories; defaults to every unfinished campaign.
        snapshots: Vec<PathBuf>,
    },
}

/// Exit status: 0 success, 1 findings present, 2 operational error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    Findings,
}

impl Status {
    fn from_findings(n: usize) -> Self {
        if n > 0 {
            Status::Findings
        } else {
            Status::Clean
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let ws = Workspace::open(
        cli.config.as_deref(),
        cli.out,
        cli.replay,
        cli.record,
        cli.budget.as_deref(),
        cli.window,
    )?;
    match cli.command {
        Command::Ingest {
            repo,
            fixtures,
            resume_from,
        } => commands::ingest(&ws, repo, fixtures, resume_from),
        Command::Catalog { library } => commands::catalog(&ws, library),
        Command::Describe => commands::describe(&ws),
        Command::Embed => commands::embed(&ws),
        Command::Pilot { triplets } => commands::pilot(&ws, triplets),
        Command::Fuzz { issue } => commands::fuzz(&ws, &issue),
        Command::Validate { campaigns } => commands::validate(&ws, campaigns),
        Command::Report => commands::report(&ws),
        Command::Resume { snapshots } => commands::resume(&ws, snapshots),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Clean) => ExitCode::from(0),
        Ok(Status::Findings) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
