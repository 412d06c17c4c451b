//! Embedding provider backed by an HTTP embeddings endpoint.

use std::time::Duration;

use countseg_core::similarity::{EmbeddingProvider, EmbeddingVector};
use countseg_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpEmbeddingConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    pub api_key_env: Option<String>,
    /// Declare that the service cannot take concurrent requests.
    pub single_flight: bool,
}

impl Default for HttpEmbeddingConfig {
    fn default() -> Self {
        HttpEmbeddingConfig {
            endpoint: "http://localhost:8001/v1/embeddings".into(),
            model: "georsclip".into(),
            timeout_secs: 60.0,
            api_key_env: None,
            single_flight: false,
        }
    }
}

/// POSTs `{"model", "input": [texts]}` and reads vectors from either
/// `{"data": [{"index", "embedding"}]}` or `{"embeddings": [[...]]}`.
pub struct HttpEmbeddingProvider {
    config: HttpEmbeddingConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

fn provider_error(key: Option<&str>, message: impl Into<String>) -> Error {
    Error::Provider {
        key: key.map(str::to_string),
        message: message.into(),
    }
}

impl HttpEmbeddingProvider {
    pub fn new(config: HttpEmbeddingConfig) -> Result<Self, Error> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| provider_error(None, format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| provider_error(None, e.to_string()))?;
        Ok(HttpEmbeddingProvider { config, api_key, client })
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed(&self, keys: &[String]) -> Result<Vec<EmbeddingVector<f32>>, Error> {
        if keys.is_empty() {
            return Ok(Vec::new());
        }
        let first = keys.first().map(String::as_str);
        let endpoint = &self.config.endpoint;
        let mut req = self
            .client
            .post(endpoint)
            .json(&json!({"model": self.config.model, "input": keys}));
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req
            .send()
            .map_err(|e| provider_error(first, format!("{endpoint}: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| provider_error(first, format!("{endpoint}: {e}")))?;
        if !status.is_success() {
            return Err(provider_error(first, format!("{endpoint} returned HTTP {status}: {text}")));
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| provider_error(first, format!("{endpoint}: bad JSON: {e}")))?;
        let rows: Vec<Value> = if let Some(data) = v["data"].as_array() {
            let mut items: Vec<(u64, Value)> = data
                .iter()
                .enumerate()
                .map(|(k, d)| (d["index"].as_u64().unwrap_or(k as u64), d["embedding"].clone()))
                .collect();
            items.sort_by_key(|(i, _)| *i);
            items.into_iter().map(|(_, e)| e).collect()
        } else if let Some(e) = v["embeddings"].as_array() {
            e.clone()
        } else {
            return Err(provider_error(first, format!("{endpoint}: response has no embeddings")));
        };
        if rows.len() != keys.len() {
            return Err(provider_error(
                first,
                format!("{endpoint}: asked for {} embeddings, got {}", keys.len(), rows.len()),
            ));
        }
        rows.iter()
            .zip(keys)
            .map(|(row, key)| {
                let values: Option<Vec<f32>> = row
                    .as_array()
                    .map(|a| a.iter().map(|x| x.as_f64().map(|f| f as f32)).collect::<Option<_>>())
                    .unwrap_or(None);
                let values = values.ok_or_else(|| provider_error(Some(key), "embedding is not a numeric array"))?;
                EmbeddingVector::new(values).map_err(|e| provider_error(Some(key), e.to_string()))
            })
            .collect()
    }

    fn single_flight(&self) -> bool {
        self.config.single_flight
    }
}
