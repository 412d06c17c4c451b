//! Per-image category counting by a remote vision-language model.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use base64::Engine as _;
use countseg_core::CountPrediction;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CounterError {
    #[error("counter endpoint {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("counter endpoint {endpoint} returned HTTP {status}: {body}")]
    Status { endpoint: String, status: u16, body: String },

    #[error("environment variable {0} holding the API key is not set")]
    Credential(String),

    #[error("could not read image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("no JSON object in counter response: {raw:?}")]
    Parse { raw: String },

    #[error("bad count for {key:?}: {message}")]
    Value { key: String, message: String, raw: String },

    #[error("replay: {0}")]
    Replay(String),
}

impl CounterError {
    /// Raw response text, for errors raised after a response was received.
    pub fn raw(&self) -> Option<&str> {
        match self {
            CounterError::Parse { raw } | CounterError::Value { raw, .. } => Some(raw),
            _ => None,
        }
    }

    /// True for failures of the remote service itself.
    pub fn is_remote(&self) -> bool {
        matches!(
            self,
            CounterError::Transport { .. }
                | CounterError::Status { .. }
                | CounterError::Parse { .. }
                | CounterError::Value { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterClientConfig {
    /// Chat-completions URL, e.g. `http://localhost:8000/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub timeout_secs: f64,
    /// Total attempts per image, including the first.
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff_ms: u64,
    /// Name of the environment variable holding the API key. The key itself
    /// is never stored.
    pub api_key_env: Option<String>,
    /// Upper bound on concurrent requests.
    pub max_concurrent: usize,
}

impl Default for CounterClientConfig {
    fn default() -> Self {
        CounterClientConfig {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            temperature: 0.01,
            top_p: 1.0,
            timeout_secs: 120.0,
            max_attempts: 3,
            backoff_ms: 1000,
            api_key_env: None,
            max_concurrent: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// One counter call, persisted for audit and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub image_id: String,
    pub prompt: String,
    pub raw_response: String,
    /// Every parsed entry including zero counts; `null` if parsing failed.
    pub parsed: Option<IndexMap<String, u64>>,
    pub usage: Usage,
    pub latency_ms: f64,
}

/// Counts parsed from a response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCounts {
    /// All entries, zeros included.
    pub all: IndexMap<String, u64>,
    /// Positive entries only; this is what the matcher sees.
    pub positive: IndexMap<String, u64>,
}

fn strip_fences(text: &str) -> &str {
    let Some(start) = text.find("```") else {
        return text;
    };
    let body = &text[start + 3..];
    let body = match body.find('\n') {
        Some(nl) if body[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => &body[nl + 1..],
        _ => body,
    };
    match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    }
}

fn first_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(m))) = stream.next() {
            return Some(m);
        }
    }
    None
}

/// Extracts category counts from a model reply. Code fences and surrounding
/// prose are ignored, the first JSON object is used, keys are trimmed and
/// lowercased, and integral floats are accepted.
pub fn parse_count_response(text: &str) -> Result<ParsedCounts, CounterError> {
    let obj = first_object(strip_fences(text))
        .or_else(|| first_object(text))
        .ok_or_else(|| CounterError::Parse { raw: text.to_string() })?;
    let bad = |key: &str, message: String| CounterError::Value {
        key: key.to_string(),
        message,
        raw: text.to_string(),
    };
    let mut all = IndexMap::new();
    for (k, v) in &obj {
        let key = k.trim().to_lowercase();
        if key.is_empty() {
            return Err(bad(k, "empty category name".into()));
        }
        let n = match v {
            Value::Number(n) => {
                if let Some(u) = n.as_u64() {
                    u
                } else {
                    let f = n.as_f64().unwrap_or(f64::NAN);
                    if f < 0.0 {
                        return Err(bad(k, format!("negative count {n}")));
                    }
                    if f.fract() != 0.0 || !f.is_finite() || f > u64::MAX as f64 {
                        return Err(bad(k, format!("count {n} is not a whole number")));
                    }
                    f as u64
                }
            }
            other => return Err(bad(k, format!("count {other} is not a number"))),
        };
        if all.insert(key.clone(), n).is_some() {
            return Err(bad(k, format!("category {key:?} appears twice")));
        }
    }
    let positive = all.iter().filter(|(_, &n)| n > 0).map(|(k, &n)| (k.clone(), n)).collect();
    Ok(ParsedCounts { all, positive })
}

/// A reply from the counter before parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawReply {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: f64,
}

pub trait Counter: Send + Sync {
    fn query(&self, image_id: &str, image: &Path, prompt: &str) -> Result<RawReply, CounterError>;
}

/// Result of one counting call. The audit record exists whenever a reply was
/// received, even if it failed to parse.
#[derive(Debug, Clone)]
pub struct CountCall {
    pub audit: AuditRecord,
    pub prediction: Result<CountPrediction, String>,
}

pub fn count_objects(
    counter: &dyn Counter,
    image_id: &str,
    image: &Path,
    prompt: &str,
) -> Result<CountCall, CounterError> {
    let reply = counter.query(image_id, image, prompt)?;
    let parsed = parse_count_response(&reply.text);
    let audit = AuditRecord {
        image_id: image_id.to_string(),
        prompt: prompt.to_string(),
        raw_response: reply.text,
        parsed: parsed.as_ref().ok().map(|p| p.all.clone()),
        usage: reply.usage,
        latency_ms: reply.latency_ms,
    };
    let prediction = parsed
        .map_err(|e| e.to_string())
        .and_then(|p| CountPrediction::new(image_id, p.positive).map_err(|e| e.to_string()));
    Ok(CountCall { audit, prediction })
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("tif" | "tiff") => "image/tiff",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

/// Chat-completions client: one user message with the prompt text and the
/// image as a base64 data URL.
pub struct HttpCounter {
    config: CounterClientConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    permits: Semaphore,
}

impl HttpCounter {
    pub fn new(config: CounterClientConfig) -> Result<Self, CounterError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| CounterError::Credential(var.clone()))?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| CounterError::Transport {
                endpoint: config.endpoint.clone(),
                message: e.to_string(),
            })?;
        let permits = Semaphore::new(config.max_concurrent.max(1));
        Ok(HttpCounter {
            config,
            api_key,
            client,
            permits,
        })
    }

    pub fn request_body(&self, image_bytes: &[u8], mime: &str, prompt: &str) -> Value {
        let data = base64::engine::general_purpose::STANDARD.encode(image_bytes);
        json!({
            "model": self.config.model,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{data}")}}
                ]
            }],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p
        })
    }

    fn attempt(&self, body: &Value) -> Result<Value, (bool, CounterError)> {
        let endpoint = &self.config.endpoint;
        let mut req = self.client.post(endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            (
                true,
                CounterError::Transport {
                    endpoint: endpoint.clone(),
                    message: e.to_string(),
                },
            )
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            (
                true,
                CounterError::Transport {
                    endpoint: endpoint.clone(),
                    message: e.to_string(),
                },
            )
        })?;
        if !status.is_success() {
            return Err((
                status.is_server_error(),
                CounterError::Status {
                    endpoint: endpoint.clone(),
                    status: status.as_u16(),
                    body: text,
                },
            ));
        }
        serde_json::from_str(&text).map_err(|e| {
            (
                false,
                CounterError::Transport {
                    endpoint: endpoint.clone(),
                    message: format!("response is not JSON ({e}): {text}"),
                },
            )
        })
    }
}

impl Counter for HttpCounter {
    fn query(&self, _image_id: &str, image: &Path, prompt: &str) -> Result<RawReply, CounterError> {
        let bytes = fs::read(image).map_err(|e| CounterError::Image {
            path: image.to_path_buf(),
            message: e.to_string(),
        })?;
        let body = self.request_body(&bytes, mime_for(image), prompt);
        let _permit = self.permits.acquire();
        let start = Instant::now();
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let attempts = self.config.max_attempts.max(1);
        let mut k = 1;
        let value = loop {
            match self.attempt(&body) {
                Ok(v) => break v,
                Err((retry, e)) => {
                    if !retry || k >= attempts {
                        return Err(e);
                    }
                    log::warn!("attempt {k}/{attempts} failed: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    k += 1;
                }
            }
        };
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        let text = match &value["choices"][0]["message"]["content"] {
            Value::String(s) => s.clone(),
            Value::Array(parts) => parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join(""),
            _ => {
                return Err(CounterError::Transport {
                    endpoint: self.config.endpoint.clone(),
                    message: format!("response has no choices[0].message.content: {value}"),
                })
            }
        };
        let usage = Usage {
            prompt_tokens: value["usage"]["prompt_tokens"].as_u64(),
            completion_tokens: value["usage"]["completion_tokens"].as_u64(),
        };
        Ok(RawReply {
            text,
            usage,
            latency_ms,
        })
    }
}

/// Counting semaphore bounding in-flight requests.
struct Semaphore {
    free: std::sync::Mutex<usize>,
    cv: std::sync::Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: std::sync::Mutex::new(n),
            cv: std::sync::Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Serves replies from stored audit records; never touches the network.
pub struct ReplayCounter {
    records: HashMap<String, AuditRecord>,
}

impl ReplayCounter {
    pub fn new(records: impl IntoIterator<Item = AuditRecord>) -> Self {
        ReplayCounter {
            records: records.into_iter().map(|r| (r.image_id.clone(), r)).collect(),
        }
    }

    /// Loads every `*.json` audit record in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, CounterError> {
        Ok(Self::new(load_audit_dir(dir)?))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Counter for ReplayCounter {
    fn query(&self, image_id: &str, _image: &Path, prompt: &str) -> Result<RawReply, CounterError> {
        let rec = self
            .records
            .get(image_id)
            .ok_or_else(|| CounterError::Replay(format!("no audit record for image {image_id:?}")))?;
        if rec.prompt != prompt {
            log::warn!("image {image_id}: replayed prompt differs from the current prompt");
        }
        Ok(RawReply {
            text: rec.raw_response.clone(),
            usage: rec.usage,
            latency_ms: rec.latency_ms,
        })
    }
}

/// Reads every `*.json` audit record in `dir`, in file-name order.
pub fn load_audit_dir(dir: &Path) -> Result<Vec<AuditRecord>, CounterError> {
    let entries = fs::read_dir(dir).map_err(|e| CounterError::Replay(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| CounterError::Replay(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CounterError::Replay(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// File name for an image's audit record.
pub fn audit_file_name(image_id: &str) -> String {
    let safe: String = image_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.json")
}
