//! TOML configuration.
//!
//! ```toml
//! [models]
//! pattern_extraction = "o3-mini"
//! self_validation = "gpt-4.1-mini"
//!
//! [pricing."gpt-4o-mini"]
//! input_per_mtok = "0.15"
//! output_per_mtok = "0.60"
//!
//! [campaign]
//! window_size = 10
//! budget = "25.00"
//!
//! [harness]
//! command = ["python3", "-m", "xferfuzz_harness"]
//! parallelism = 4
//! ```
//!
//! Every section and key is optional.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzz::CampaignConfig;
use crate::llm::{Cost, ModelRouting, Pricing};
use crate::validate::ValidatorConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub models: ModelRouting,
    /// Per-model prices as decimal strings per million tokens.
    pub pricing: BTreeMap<String, PriceConfig>,
    pub campaign: CampaignSection,
    pub validation: ValidationSection,
    pub harness: HarnessSection,
    pub llm: LlmSection,
    pub github: GithubSection,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceConfig {
    pub input_per_mtok: String,
    #[serde(default)]
    pub output_per_mtok: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub window_size: usize,
    pub queue_depth: usize,
    pub expansion_count: usize,
    pub repeats: u32,
    pub timeout_seconds: f64,
    pub max_tests_per_pattern: usize,
    pub budget: Option<String>,
}

impl Default for CampaignSection {
    fn default() -> Self {
        let d = CampaignConfig::default();
        CampaignSection {
            window_size: d.window_size,
            queue_depth: d.queue_depth,
            expansion_count: d.expansion_count,
            repeats: d.repeats,
            timeout_seconds: d.timeout_seconds,
            max_tests_per_pattern: d.max_tests_per_pattern,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub debate: bool,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection { debate: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub command: Vec<String>,
    pub parallelism: usize,
    pub library_ref: String,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            command: vec!["python3".into(), "-m".into(), "xferfuzz_harness".into()],
            parallelism: 1,
            library_ref: "torch".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub base_url: String,
    pub api_key_env: String,
    pub max_inflight: usize,
    pub max_tokens: u32,
    /// Sampling temperature for generation prompts; validation always uses 0.
    pub temperature: Option<f64>,
    pub embedding_batch: usize,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_inflight: 4,
            max_tokens: 4096,
            temperature: None,
            embedding_batch: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GithubSection {
    pub api_base: String,
    pub token_env: String,
    pub repos: Vec<String>,
}

impl Default for GithubSection {
    fn default() -> Self {
        GithubSection {
            api_base: "https://api.github.com".into(),
            token_env: "GITHUB_TOKEN".into(),
            repos: vec!["pytorch/pytorch".into()],
        }
    }
}

/// List prices per million tokens for the default models.
const DEFAULT_PRICES: [(&str, &str, &str); 4] = [
    ("o3-mini", "1.10", "4.40"),
    ("gpt-4o-mini", "0.15", "0.60"),
    ("gpt-4.1-mini", "0.40", "1.60"),
    ("text-embedding-3-small", "0.02", "0"),
];

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.campaign_config()?.check()?;
        config.prices()?;
        Ok(config)
    }

    pub fn campaign_config(&self) -> Result<CampaignConfig> {
        let c = &self.campaign;
        Ok(CampaignConfig {
            window_size: c.window_size,
            queue_depth: c.queue_depth,
            expansion_count: c.expansion_count,
            repeats: c.repeats,
            timeout_seconds: c.timeout_seconds,
            max_tests_per_pattern: c.max_tests_per_pattern,
            budget: c.budget.as_deref().map(str::parse).transpose()?,
            parallelism: self.harness.parallelism.max(1),
        })
    }

    pub fn validator_config(&self) -> ValidatorConfig {
        ValidatorConfig {
            repeats: self.campaign.repeats,
            debate: self.validation.debate,
        }
    }

    /// Defaults overlaid with the configured prices.
    pub fn prices(&self) -> Result<BTreeMap<String, Pricing>> {
        let mut out = BTreeMap::new();
        for (model, input, output) in DEFAULT_PRICES {
            out.insert(
                model.to_string(),
                Pricing::new(input.parse()?, output.parse()?),
            );
        }
        for (model, p) in &self.pricing {
            let output: Cost = p.output_per_mtok.as_deref().unwrap_or("0").parse()?;
            out.insert(
                model.clone(),
                Pricing::new(p.input_per_mtok.parse()?, output),
            );
        }
        Ok(out)
    }
}
