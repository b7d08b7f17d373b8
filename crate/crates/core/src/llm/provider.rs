//! Live providers behind the gateway.

use serde::Deserialize;
use serde_json::json;

use super::LlmRequest;

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingReply {
    pub values: Vec<f64>,
    pub prompt_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct ProviderError {
    pub message: String,
    /// Transient failures (timeouts, 429, 5xx) are retried by the gateway.
    pub retryable: bool,
}

impl ProviderError {
    pub fn transient(message: impl Into<String>) -> Self {
        ProviderError {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        ProviderError {
            message: message.into(),
            retryable: false,
        }
    }
}

/// A chat-completion and embedding backend.
pub trait Provider: Send + Sync {
    fn chat(&self, request: &LlmRequest) -> Result<ChatReply, ProviderError>;

    fn embed(&self, model_id: &str, texts: &[String])
        -> Result<Vec<EmbeddingReply>, ProviderError>;
}

/// OpenAI-compatible HTTP endpoints (`/chat/completions`, `/embeddings`).
#[derive(Debug, Clone)]
pub struct OpenAiProvider {
    base_url: String,
    api_key: String,
}

impl OpenAiProvider {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        OpenAiProvider {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
        }
    }

    /// Reads the key from the environment variable `var`.
    pub fn from_env(base_url: impl Into<String>, var: &str) -> Result<Self, ProviderError> {
        let key = std::env::var(var)
            .map_err(|_| ProviderError::fatal(format!("environment variable {var} is not set")))?;
        Ok(Self::new(base_url, key))
    }

    fn post(
        &self,
        path: &str,
        body: serde_json::Value,
    ) -> Result<serde_json::Value, ProviderError> {
        let url = format!("{}{}", self.base_url, path);
        let mut resp = ureq::post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(classify)?;
        resp.body_mut()
            .read_json::<serde_json::Value>()
            .map_err(|e| ProviderError::transient(format!("decoding response: {e}")))
    }
}

fn classify(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            ProviderError::transient(format!("HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => ProviderError::fatal(format!("HTTP {code}")),
        other => ProviderError::transient(other.to_string()),
    }
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl Provider for OpenAiProvider {
    fn chat(&self, request: &LlmRequest) -> Result<ChatReply, ProviderError> {
        let mut body = json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "max_completion_tokens": request.max_tokens,
        });
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        let v = self.post("/chat/completions", body)?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::fatal("response has no message content"))?
            .to_string();
        let usage: Usage = serde_json::from_value(v["usage"].clone()).unwrap_or(Usage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok(ChatReply {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }

    fn embed(
        &self,
        model_id: &str,
        texts: &[String],
    ) -> Result<Vec<EmbeddingReply>, ProviderError> {
        let v = self.post("/embeddings", json!({ "model": model_id, "input": texts }))?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| ProviderError::fatal("embedding response has no data"))?;
        if data.len() != texts.len() {
            return Err(ProviderError::fatal(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        let total = v["usage"]["prompt_tokens"].as_u64().unwrap_or(0);
        let share = split_tokens(total, texts.len());
        let mut rows: Vec<(u64, Vec<f64>)> = Vec::with_capacity(data.len());
        for item in data {
            let index = item["index"].as_u64().unwrap_or(rows.len() as u64);
            let values: Vec<f64> = serde_json::from_value(item["embedding"].clone())
                .map_err(|e| ProviderError::fatal(format!("bad embedding: {e}")))?;
            rows.push((index, values));
        }
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows
            .into_iter()
            .zip(share)
            .map(|((_, values), prompt_tokens)| EmbeddingReply {
                values,
                prompt_tokens,
            })
            .collect())
    }
}

/// Splits a batch token count across items, remainder to the first ones.
pub(crate) fn split_tokens(total: u64, n: usize) -> Vec<u64> {
    if n == 0 {
        return Vec::new();
    }
    let base = total / n as u64;
    let extra = (total % n as u64) as usize;
    (0..n).map(|i| base + u64::from(i < extra)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_split_sums() {
        assert_eq!(split_tokens(10, 3), [4, 3, 3]);
        assert_eq!(split_tokens(0, 2), [0, 0]);
        assert!(split_tokens(5, 0).is_empty());
    }
}
