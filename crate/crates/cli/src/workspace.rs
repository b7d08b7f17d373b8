//! Configuration, output layout and the LLM/harness wiring shared by every
//! subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};

use xferfuzz_core::config::Config;
use xferfuzz_core::harness::{RecordingHarness, StdioHarness, TranscriptHarness};
use xferfuzz_core::llm::{Cassette, OpenAiProvider};
use xferfuzz_core::matcher::{Catalog, Matcher};
use xferfuzz_core::report::SnapshotRefs;
use xferfuzz_core::{CampaignConfig, Cost, CostLedger, EmbeddingDb, Gateway, Harness, Mode};

pub const CASSETTE: &str = "cassette.jsonl";
pub const TRANSCRIPT: &str = "harness.jsonl";

pub struct Workspace {
    pub config: Config,
    pub out: PathBuf,
    replay: Option<PathBuf>,
    record: bool,
    budget: Option<Cost>,
}

impl Workspace {
    pub fn open(
        config: Option<&Path>,
        out: PathBuf,
        replay: Option<PathBuf>,
        record: bool,
        budget: Option<&str>,
        window: Option<usize>,
    ) -> anyhow::Result<Self> {
        let mut config = match config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(w) = window {
            config.campaign.window_size = w;
        }
        if let Some(b) = budget {
            b.parse::<Cost>().with_context(|| format!("--budget {b}"))?;
            config.campaign.budget = Some(b.to_string());
        }
        let budget = config.campaign_config()?.budget;
        if let Some(dir) = &replay {
            if !dir.join(CASSETTE).exists() {
                bail!("{} has no {CASSETTE}", dir.display());
            }
        }
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Workspace {
            config,
            out,
            replay,
            record,
            budget,
        })
    }

    pub fn is_replay(&self) -> bool {
        self.replay.is_some()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn campaign_config(&self) -> anyhow::Result<CampaignConfig> {
        let c = self.config.campaign_config()?;
        c.check()?;
        Ok(c)
    }

    fn cassette_path(&self) -> Option<PathBuf> {
        match (&self.replay, self.record) {
            (Some(dir), _) => Some(dir.join(CASSETTE)),
            (None, true) => Some(self.path(CASSETTE)),
            (None, false) => None,
        }
    }

    fn transcript_path(&self) -> Option<PathBuf> {
        match (&self.replay, self.record) {
            (Some(dir), _) => Some(dir.join(TRANSCRIPT)).filter(|p| p.exists()),
            (None, true) => Some(self.path(TRANSCRIPT)),
            (None, false) => None,
        }
    }

    pub fn refs(&self) -> SnapshotRefs {
        SnapshotRefs {
            cassette: self.cassette_path(),
            harness_transcript: self.transcript_path(),
        }
    }

    pub fn gateway(&self) -> anyhow::Result<Gateway> {
        let llm = &self.config.llm;
        let mode = match (&self.replay, self.record) {
            (Some(_), _) => Mode::Replay,
            (None, true) => Mode::Record,
            (None, false) => Mode::Live,
        };
        let mut builder = Gateway::builder(mode)
            .routing(self.config.models.clone())
            .prices(self.config.prices()?)
            .budget(self.budget)
            .max_inflight(llm.max_inflight)
            .max_tokens(llm.max_tokens)
            .generation_temperature(llm.temperature);
        match mode {
            Mode::Replay => {
                let path = self.cassette_path().expect("replay has a cassette");
                builder = builder.cassette(Cassette::load(&path)?);
            }
            Mode::Record | Mode::Live => {
                let provider = OpenAiProvider::from_env(llm.base_url.clone(), &llm.api_key_env)?;
                builder = builder.provider(Arc::new(provider));
                if mode == Mode::Record {
                    let path = self.cassette_path().expect("record has a cassette");
                    builder = builder.cassette(Cassette::open_for_recording(&path)?);
                }
            }
        }
        Ok(builder.build()?)
    }

    /// Transcript replay when one is available, otherwise the configured
    /// harness command, recorded under `--record`.
    pub fn harness(&self) -> anyhow::Result<Box<dyn Harness>> {
        if self.replay.is_some() {
            if let Some(path) = self.transcript_path() {
                return Ok(Box::new(TranscriptHarness::load(&path)?));
            }
        }
        let h = &self.config.harness;
        if h.command.is_empty() {
            bail!("no harness command configured");
        }
        let live = StdioHarness::launch(h.command.clone(), h.parallelism)
            .with_context(|| format!("launching harness `{}`", h.command.join(" ")))?;
        if self.record {
            Ok(Box::new(RecordingHarness::new(live, self.path(TRANSCRIPT))))
        } else {
            Ok(Box::new(live))
        }
    }

    pub fn matcher(&self) -> anyhow::Result<Matcher> {
        let catalog = Catalog::load(&self.path("catalog.jsonl")).context("run `catalog` first")?;
        let db = EmbeddingDb::load(&self.path("embeddings.jsonl")).context("run `embed` first")?;
        Ok(Matcher::new(catalog, db))
    }

    /// Adds this run's spending to `ledger.json`.
    pub fn save_ledger(&self, gateway: &Gateway) -> anyhow::Result<()> {
        let path = self.path("ledger.json");
        let mut ledger = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str::<CostLedger>(&text)
                .with_context(|| format!("{}", path.display()))?,
            Err(_) => CostLedger::new(),
        };
        let new = gateway.ledger();
        if new.entries().is_empty() {
            return Ok(());
        }
        for e in new.entries() {
            ledger.record(e.clone());
        }
        let text = serde_json::to_string_pretty(&ledger)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        log::info!(
            "spent {} this run; {} in total",
            new.grand_total(),
            ledger.grand_total()
        );
        Ok(())
    }
}

/// Runs `f` with a gateway and saves the ledger whether or not it succeeds.
pub fn with_gateway<T>(
    ws: &Workspace,
    f: impl FnOnce(&Gateway) -> anyhow::Result<T>,
) -> anyhow::Result<T> {
    let gateway = ws.gateway()?;
    let result = f(&gateway);
    let saved = ws.save_ledger(&gateway);
    let value = result?;
    saved?;
    Ok(value)
}
