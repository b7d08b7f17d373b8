//! Uniform access to chat-completion and embedding providers.
//!
//! The [`Gateway`] adds three things on top of a raw [`Provider`]:
//! cassette-backed record/replay, bounded retry, and a cost ledger.

mod cassette;
mod cost;
mod provider;
mod template;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cassette::{sha256_hex, Cassette, CassetteEntry, CassetteKey};
pub use cost::{Cost, CostLedger, LedgerEntry, Pricing};
pub use provider::{ChatReply, EmbeddingReply, OpenAiProvider, Provider, ProviderError};
pub use template::{repair_suffix, Component, TemplateId};

/// Re-asks allowed after the first unparseable reply.
pub const MAX_REPAIRS: u32 = 3;

fn is_parse_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Unparseable { .. }
            | Error::MissingField(_)
            | Error::UnknownCategory(_)
            | Error::UnknownIrType(_)
    )
}

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Call the provider; persist nothing.
    Live,
    /// Serve from the cassette when possible, otherwise call and record.
    Record,
    /// Serve only from the cassette.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub template_id: TemplateId,
    pub rendered_prompt: String,
    pub model_id: String,
    /// `None` leaves the provider default in place.
    pub temperature: Option<f64>,
    pub max_tokens: u32,
    /// Repetition index of the same prompt (validation voting).
    #[serde(default)]
    pub epoch: u32,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<()> {
        if self.rendered_prompt.is_empty() {
            return Err(Error::InvalidRequest("rendered prompt is empty".into()));
        }
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(Error::InvalidRequest(format!(
                    "temperature {t} outside [0, 2]"
                )));
            }
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn cassette_key(&self) -> CassetteKey {
        CassetteKey::new(self.template_id, &self.rendered_prompt, self.epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: Cost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub model_id: String,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(model_id: impl Into<String>, values: Vec<f64>) -> Self {
        EmbeddingVector {
            model_id: model_id.into(),
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Which model serves each component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelRouting {
    pub pattern_extraction: String,
    pub api_matching: String,
    pub fuzzing: String,
    pub self_validation: String,
    pub embedding: String,
}

impl Default for ModelRouting {
    fn default() -> Self {
        ModelRouting {
            pattern_extraction: "o3-mini".into(),
            api_matching: "gpt-4o-mini".into(),
            fuzzing: "gpt-4o-mini".into(),
            self_validation: "gpt-4.1-mini".into(),
            embedding: "text-embedding-3-small".into(),
        }
    }
}

impl ModelRouting {
    pub fn model_for(&self, template: TemplateId) -> &str {
        if template == TemplateId::Embedding {
            return &self.embedding;
        }
        match template.component() {
            Component::PatternExtraction => &self.pattern_extraction,
            Component::ApiMatching => &self.api_matching,
            Component::Fuzzing => &self.fuzzing,
            Component::SelfValidation => &self.self_validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Counting semaphore bounding simultaneous live requests.
#[derive(Debug)]
struct InflightLimit {
    available: Mutex<usize>,
    freed: Condvar,
}

impl InflightLimit {
    fn new(n: usize) -> Self {
        InflightLimit {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InflightPermit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        InflightPermit(self)
    }
}

struct InflightPermit<'a>(&'a InflightLimit);

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

pub struct GatewayBuilder {
    mode: Mode,
    provider: Option<Arc<dyn Provider>>,
    cassette: Cassette,
    routing: ModelRouting,
    prices: BTreeMap<String, Pricing>,
    budget: Option<Cost>,
    retry: RetryPolicy,
    max_inflight: usize,
    max_tokens: u32,
    generation_temperature: Option<f64>,
}

impl GatewayBuilder {
    pub fn provider(mut self, provider: Arc<dyn Provider>) -> Self {
        self.provider = Some(provider);
        self
    }

    pub fn cassette(mut self, cassette: Cassette) -> Self {
        self.cassette = cassette;
        self
    }

    pub fn routing(mut self, routing: ModelRouting) -> Self {
        self.routing = routing;
        self
    }

    pub fn price(mut self, model_id: impl Into<String>, pricing: Pricing) -> Self {
        self.prices.insert(model_id.into(), pricing);
        self
    }

    pub fn prices(mut self, prices: BTreeMap<String, Pricing>) -> Self {
        self.prices.extend(prices);
        self
    }

    pub fn budget(mut self, budget: Option<Cost>) -> Self {
        self.budget = budget;
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn max_inflight(mut self, n: usize) -> Self {
        self.max_inflight = n;
        self
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn generation_temperature(mut self, t: Option<f64>) -> Self {
        self.generation_temperature = t;
        self
    }

    pub fn build(self) -> Result<Gateway> {
        if self.mode != Mode::Replay && self.provider.is_none() {
            return Err(Error::Config(format!(
                "{:?} mode needs a provider",
                self.mode
            )));
        }
        Ok(Gateway {
            mode: self.mode,
            provider: self.provider,
            cassette: Mutex::new(self.cassette),
            ledger: Mutex::new(CostLedger::new()),
            routing: self.routing,
            prices: self.prices,
            budget: self.budget,
            retry: self.retry,
            inflight: InflightLimit::new(self.max_inflight),
            max_tokens: self.max_tokens,
            generation_temperature: self.generation_temperature,
        })
    }
}

pub struct Gateway {
    mode: Mode,
    provider: Option<Arc<dyn Provider>>,
    cassette: Mutex<Cassette>,
    ledger: Mutex<CostLedger>,
    routing: ModelRouting,
    prices: BTreeMap<String, Pricing>,
    budget: Option<Cost>,
    retry: RetryPolicy,
    inflight: InflightLimit,
    max_tokens: u32,
    generation_temperature: Option<f64>,
}

impl Gateway {
    pub fn builder(mode: Mode) -> GatewayBuilder {
        GatewayBuilder {
            mode,
            provider: None,
            cassette: Cassette::new(),
            routing: ModelRouting::default(),
            prices: BTreeMap::new(),
            budget: None,
            retry: RetryPolicy::default(),
            max_inflight: 4,
            max_tokens: 4096,
            generation_temperature: None,
        }
    }

    /// Replay-only gateway over an already loaded cassette.
    pub fn replay(cassette: Cassette) -> Gateway {
        Gateway::builder(Mode::Replay)
            .cassette(cassette)
            .build()
            .expect("replay gateway needs no provider")
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn routing(&self) -> &ModelRouting {
        &self.routing
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger.lock().unwrap().clone()
    }

    pub fn spent(&self) -> Cost {
        self.ledger.lock().unwrap().grand_total()
    }

    pub fn budget(&self) -> Option<Cost> {
        self.budget
    }

    pub fn cassette_len(&self) -> usize {
        self.cassette.lock().unwrap().len()
    }

    /// Renders `template`, routes it to its component's model and sends it.
    pub fn prompt(
        &self,
        template: TemplateId,
        slots: &[(&str, &str)],
        epoch: u32,
    ) -> Result<LlmResponse> {
        let rendered = template.render(slots)?;
        self.prompt_rendered(template, rendered, epoch)
    }

    /// Like [`Gateway::prompt`] for an already rendered prompt (re-asks, debate turns).
    pub fn prompt_rendered(
        &self,
        template: TemplateId,
        rendered: String,
        epoch: u32,
    ) -> Result<LlmResponse> {
        let temperature = if template.is_validation() {
            Some(0.0)
        } else {
            self.generation_temperature
        };
        self.complete(&LlmRequest {
            template_id: template,
            model_id: self.routing.model_for(template).to_string(),
            rendered_prompt: rendered,
            temperature,
            max_tokens: self.max_tokens,
            epoch,
        })
    }

    /// Sends `template` and parses the reply, re-asking with the parse error
    /// appended up to [`MAX_REPAIRS`] times. Gateway errors are not retried here.
    pub fn ask<T>(
        &self,
        template: TemplateId,
        slots: &[(&str, &str)],
        epoch: u32,
        mut parse: impl FnMut(&str) -> Result<T>,
    ) -> Result<T> {
        let base = template.render(slots)?;
        let mut prompt = base.clone();
        let mut attempt = 0;
        loop {
            let reply = self.prompt_rendered(template, prompt, epoch)?;
            match parse(&reply.text) {
                Ok(v) => return Ok(v),
                Err(e) if attempt < MAX_REPAIRS && is_parse_error(&e) => {
                    log::debug!("re-asking {template} after: {e}");
                    attempt += 1;
                    prompt = format!("{base}{}", repair_suffix(&e.to_string()));
                    // Distinct repairs with the same message would share a key.
                    if attempt > 1 {
                        prompt.push_str(&format!(" (attempt {})", attempt + 1));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        request.validate()?;
        self.check_budget()?;
        let key = request.cassette_key();

        let recorded = self.cassette.lock().unwrap().get(&key).cloned();
        let entry = match (self.mode, recorded) {
            (Mode::Replay, Some(entry)) | (Mode::Record, Some(entry)) => entry,
            (Mode::Replay, None) => return Err(Error::MissingCassetteEntry(key.to_string())),
            (mode, None) | (mode @ Mode::Live, Some(_)) => {
                let reply = self.with_retry(|p| p.chat(request))?;
                let entry = CassetteEntry {
                    key: key.to_string(),
                    model_id: request.model_id.clone(),
                    text: reply.text,
                    prompt_tokens: reply.prompt_tokens,
                    completion_tokens: reply.completion_tokens,
                };
                if mode == Mode::Record {
                    self.record_entry(entry.clone())?;
                }
                entry
            }
        };

        let cost = self.charge(
            request.template_id.component(),
            &entry.model_id,
            entry.prompt_tokens,
            entry.completion_tokens,
        );
        Ok(LlmResponse {
            text: entry.text,
            prompt_tokens: entry.prompt_tokens,
            completion_tokens: entry.completion_tokens,
            cost,
        })
    }

    /// One vector per input, in order, all of the same dimension.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::InvalidRequest("no texts to embed".into()));
        }
        if texts.iter().any(|t| t.is_empty()) {
            return Err(Error::InvalidRequest("cannot embed empty text".into()));
        }
        self.check_budget()?;
        let model = self.routing.embedding.clone();
        let keys: Vec<CassetteKey> = texts
            .iter()
            .map(|t| CassetteKey::new(TemplateId::Embedding, t, 0))
            .collect();

        let mut entries: Vec<Option<CassetteEntry>> = if self.mode == Mode::Live {
            vec![None; texts.len()]
        } else {
            let cassette = self.cassette.lock().unwrap();
            keys.iter().map(|k| cassette.get(k).cloned()).collect()
        };

        let mut missing: Vec<usize> = Vec::new();
        for (i, e) in entries.iter().enumerate() {
            if e.is_none() && !missing.iter().any(|&j| texts[j] == texts[i]) {
                missing.push(i);
            }
        }
        if !missing.is_empty() {
            if self.mode == Mode::Replay {
                return Err(Error::MissingCassetteEntry(keys[missing[0]].to_string()));
            }
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let replies = self.with_retry(|p| p.embed(&model, &batch))?;
            if replies.len() != batch.len() {
                return Err(Error::Provider {
                    attempts: 1,
                    message: format!(
                        "asked for {} embeddings, got {}",
                        batch.len(),
                        replies.len()
                    ),
                });
            }
            for (&i, reply) in missing.iter().zip(replies) {
                let entry = CassetteEntry {
                    key: keys[i].to_string(),
                    model_id: model.clone(),
                    text: serde_json::to_string(&reply.values)?,
                    prompt_tokens: reply.prompt_tokens,
                    completion_tokens: 0,
                };
                if self.mode == Mode::Record {
                    self.record_entry(entry.clone())?;
                }
                for (j, slot) in entries.iter_mut().enumerate() {
                    if slot.is_none() && texts[j] == texts[i] {
                        *slot = Some(entry.clone());
                    }
                }
            }
        }

        let mut out = Vec::with_capacity(texts.len());
        let mut charged: Vec<&str> = Vec::new();
        for entry in entries.iter().flatten() {
            let values: Vec<f64> =
                serde_json::from_str(&entry.text).map_err(|e| Error::Unparseable {
                    template: TemplateId::Embedding.to_string(),
                    message: e.to_string(),
                })?;
            if let Some(first) = out.first() {
                let first: &EmbeddingVector = first;
                if first.dim() != values.len() {
                    return Err(Error::DimensionMismatch {
                        expected: first.dim(),
                        actual: values.len(),
                    });
                }
            }
            if !charged.contains(&entry.key.as_str()) {
                charged.push(&entry.key);
                self.charge(
                    Component::ApiMatching,
                    &entry.model_id,
                    entry.prompt_tokens,
                    0,
                );
            }
            out.push(EmbeddingVector::new(entry.model_id.clone(), values));
        }
        Ok(out)
    }

    fn check_budget(&self) -> Result<()> {
        if let Some(cap) = self.budget {
            let spent = self.spent();
            if spent >= cap {
                return Err(Error::BudgetExceeded { spent, cap });
            }
        }
        Ok(())
    }

    fn charge(
        &self,
        component: Component,
        model_id: &str,
        prompt_tokens: u64,
        completion_tokens: u64,
    ) -> Cost {
        let cost = match self.prices.get(model_id) {
            Some(p) => p.cost(prompt_tokens, completion_tokens),
            None => {
                log::debug!("no pricing for model {model_id}; charging zero");
                Cost::ZERO
            }
        };
        self.lock_ledger().record(LedgerEntry {
            component: component.to_string(),
            model_id: model_id.to_string(),
            cost,
            prompt_tokens,
            completion_tokens,
        });
        cost
    }

    fn lock_ledger(&self) -> MutexGuard<'_, CostLedger> {
        self.ledger.lock().unwrap()
    }

    fn record_entry(&self, entry: CassetteEntry) -> Result<()> {
        let mut cassette = self.cassette.lock().unwrap();
        // A concurrent caller may have recorded the same key meanwhile.
        if cassette.entries().any(|e| e.key == entry.key) {
            return Ok(());
        }
        cassette.record(entry)
    }

    fn with_retry<T>(
        &self,
        mut call: impl FnMut(&dyn Provider) -> std::result::Result<T, ProviderError>,
    ) -> Result<T> {
        let provider = self
            .provider
            .as_deref()
            .ok_or_else(|| Error::Config("no provider configured".into()))?;
        let _permit = self.inflight.acquire();
        let mut attempt = 0;
        loop {
            attempt += 1;
            match call(provider) {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable && attempt < self.retry.attempts => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt - 1);
                    log::warn!(
                        "provider attempt {attempt} failed: {}; retrying in {delay:?}",
                        e.message
                    );
                    thread::sleep(delay);
                }
                Err(e) => {
                    return Err(Error::Provider {
                        attempts: attempt,
                        message: e.message,
                    })
                }
            }
        }
    }
}
