//! Provider-agnostic chat completion with caching and retries.
//!
//! Three HTTP wire protocols are supported (OpenAI-style chat completions,
//! Anthropic-style messages, Google-style `generateContent`) plus an offline
//! mock backend. Every request that reaches a backend, mock included, is
//! counted so callers can assert that warm-cache runs stay offline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augmentation::{QUOTE_CLOSE, QUOTE_OPEN};
use crate::cache::{CacheEntry, ResponseCache};
use crate::dataset::QAInstance;
use crate::prompting::{render_prompt, Demonstration, PromptError, PromptSpec, PromptText};
use crate::taxonomy::{parse_label, Label, LabelTaxonomy, Level, NameStyle};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider refused the request: {0}")]
    ProviderRefusal(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
}

impl ClientError {
    pub fn is_transport(&self) -> bool {
        matches!(self, ClientError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    #[serde(alias = "openai")]
    OpenaiCompatible,
    #[serde(alias = "anthropic")]
    AnthropicCompatible,
    #[serde(alias = "google", alias = "gemini")]
    GoogleCompatible,
    Mock,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::OpenaiCompatible => "openai-compatible",
            ProviderKind::AnthropicCompatible => "anthropic-compatible",
            ProviderKind::GoogleCompatible => "google-compatible",
            ProviderKind::Mock => "mock",
        }
    }

    fn default_endpoint(self) -> Option<&'static str> {
        match self {
            ProviderKind::OpenaiCompatible => Some("https://api.openai.com/v1"),
            ProviderKind::AnthropicCompatible => Some("https://api.anthropic.com"),
            ProviderKind::GoogleCompatible => Some("https://generativelanguage.googleapis.com"),
            ProviderKind::Mock => None,
        }
    }

    fn default_key_env(self) -> Option<&'static str> {
        match self {
            ProviderKind::OpenaiCompatible => Some("OPENAI_API_KEY"),
            ProviderKind::AnthropicCompatible => Some("ANTHROPIC_API_KEY"),
            ProviderKind::GoogleCompatible => Some("GEMINI_API_KEY"),
            ProviderKind::Mock => None,
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "openai" | "openai-compatible" => Ok(ProviderKind::OpenaiCompatible),
            "anthropic" | "anthropic-compatible" => Ok(ProviderKind::AnthropicCompatible),
            "google" | "gemini" | "google-compatible" => Ok(ProviderKind::GoogleCompatible),
            "mock" => Ok(ProviderKind::Mock),
            other => Err(format!("unknown provider `{other}`")),
        }
    }
}

/// Offline backend behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MockMode {
    /// Always returns `output`.
    Echo { output: String },
    /// Looks the output up by instance id.
    Scripted {
        outputs: BTreeMap<String, String>,
        #[serde(default)]
        fallback: Option<String>,
    },
    /// A label at `level` chosen pseudo-randomly from the prompt fingerprint.
    RandomLabel { level: Level },
    /// Returns the text quoted between the paraphrase markers, i.e. an
    /// identity paraphraser.
    EchoQuoted,
    /// Every request fails with a transport error.
    Unavailable,
}

impl FromStr for MockMode {
    type Err = String;

    /// Compact forms: `echo-label: <text>`, `random-label: <level>`,
    /// `echo-quoted`, `unavailable`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h.trim(), Some(r.trim())),
            None => (s.trim(), None),
        };
        match (head, rest) {
            ("echo-label" | "echo", Some(out)) => Ok(MockMode::Echo { output: out.to_string() }),
            ("random-label", Some(level)) => Ok(MockMode::RandomLabel { level: level.parse()? }),
            ("echo-quoted", None) => Ok(MockMode::EchoQuoted),
            ("unavailable", None) => Ok(MockMode::Unavailable),
            _ => Err(format!(
                "unknown mock mode `{s}` (expected `echo-label: <text>`, `random-label: <level>`, `echo-quoted` or `unavailable`)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff() -> u64 {
    500
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: default_attempts(),
            initial_backoff_ms: default_backoff(),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(1 << (attempt - 1).min(16)))
    }
}

fn default_max_tokens() -> u32 {
    64
}

fn default_timeout() -> u64 {
    120
}

fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub provider: ProviderKind,
    pub model_id: String,
    /// Unset means provider default. Open-weight hosted models use 0.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub mock: Option<MockMode>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl ModelConfig {
    pub fn mock(model_id: impl Into<String>, mode: MockMode) -> Self {
        ModelConfig {
            provider: ProviderKind::Mock,
            model_id: model_id.into(),
            temperature: None,
            max_output_tokens: default_max_tokens(),
            endpoint: None,
            api_key_env: None,
            mock: Some(mode),
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn remote(provider: ProviderKind, model_id: impl Into<String>) -> Self {
        ModelConfig {
            provider,
            mock: None,
            ..Self::mock(model_id, MockMode::Unavailable)
        }
    }

    pub fn endpoint(&self) -> Option<String> {
        self.endpoint
            .clone()
            .or_else(|| self.provider.default_endpoint().map(str::to_string))
            .map(|e| e.trim_end_matches('/').to_string())
    }

    fn api_key(&self) -> Result<String, ClientError> {
        let var = self
            .api_key_env
            .clone()
            .or_else(|| self.provider.default_key_env().map(str::to_string))
            .ok_or_else(|| ClientError::Config("no credential variable configured".into()))?;
        std::env::var(&var).map_err(|_| ClientError::Auth(format!("environment variable {var} is not set")))
    }
}

/// Cache key over provider, model, temperature and prompt fingerprint.
/// Scripted mocks answer per instance, so their keys also carry the id.
pub fn cache_key(cfg: &ModelConfig, prompt: &PromptText) -> String {
    let temperature = match cfg.temperature {
        Some(t) => format!("{t}"),
        None => "default".to_string(),
    };
    let mut parts = vec![
        "v1",
        cfg.provider.as_str(),
        cfg.model_id.as_str(),
        temperature.as_str(),
        prompt.fingerprint.as_str(),
    ];
    if matches!(cfg.mock, Some(MockMode::Scripted { .. })) {
        parts.push(prompt.instance_id.as_str());
    }
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

enum AttemptError {
    Retryable(String),
    Fatal(ClientError),
}

/// A configured backend.
#[derive(Debug)]
pub struct LlmClient {
    cfg: ModelConfig,
    http: Option<reqwest::blocking::Client>,
    requests: AtomicUsize,
}

impl LlmClient {
    pub fn new(cfg: ModelConfig) -> Result<Self, ClientError> {
        let http = match cfg.provider {
            ProviderKind::Mock => {
                if cfg.mock.is_none() {
                    return Err(ClientError::Config(format!(
                        "mock model `{}` has no mock mode",
                        cfg.model_id
                    )));
                }
                None
            }
            _ => Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(cfg.timeout_secs))
                    .build()
                    .map_err(|e| ClientError::Config(e.to_string()))?,
            ),
        };
        if cfg.retry.max_attempts == 0 {
            return Err(ClientError::Config("retry.max_attempts must be at least 1".into()));
        }
        Ok(LlmClient {
            cfg,
            http,
            requests: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Requests dispatched to the backend so far, counting each retry.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    /// Sends `prompt` and returns the model's text, retrying transient
    /// failures with exponential backoff.
    pub fn complete(&self, prompt: &PromptText) -> Result<String, ClientError> {
        let max = self.cfg.retry.max_attempts;
        let mut last = String::new();
        for attempt in 1..=max {
            self.requests.fetch_add(1, Ordering::Relaxed);
            let outcome = match &self.cfg.mock {
                Some(mode) if self.cfg.provider == ProviderKind::Mock => mock_complete(mode, prompt),
                _ => self.http_once(prompt),
            };
            match outcome {
                Ok(text) => return Ok(text),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(msg)) => {
                    log::debug!("{} attempt {attempt}/{max} failed: {msg}", self.cfg.model_id);
                    last = msg;
                    if attempt < max {
                        std::thread::sleep(self.cfg.retry.delay(attempt));
                    }
                }
            }
        }
        Err(ClientError::Transport {
            attempts: max,
            message: last,
        })
    }

    fn http_once(&self, prompt: &PromptText) -> Result<String, AttemptError> {
        let http = self.http.as_ref().expect("http client exists for remote providers");
        let endpoint = self
            .cfg
            .endpoint()
            .ok_or_else(|| AttemptError::Fatal(ClientError::Config("no endpoint".into())))?;
        let key = self.cfg.api_key().map_err(AttemptError::Fatal)?;
        let messages: Vec<Value> = prompt
            .messages
            .iter()
            .map(|m| json!({"role": m.role, "content": m.content}))
            .collect();

        let request = match self.cfg.provider {
            ProviderKind::OpenaiCompatible => {
                let mut body = json!({
                    "model": self.cfg.model_id,
                    "messages": messages,
                    "max_completion_tokens": self.cfg.max_output_tokens,
                });
                if let Some(t) = self.cfg.temperature {
                    body["temperature"] = json!(t);
                }
                http.post(format!("{endpoint}/chat/completions"))
                    .bearer_auth(key)
                    .json(&body)
            }
            ProviderKind::AnthropicCompatible => {
                let mut body = json!({
                    "model": self.cfg.model_id,
                    "messages": messages,
                    "max_tokens": self.cfg.max_output_tokens,
                });
                if let Some(t) = self.cfg.temperature {
                    body["temperature"] = json!(t);
                }
                http.post(format!("{endpoint}/v1/messages"))
                    .header("x-api-key", key)
                    .header("anthropic-version", "2023-06-01")
                    .json(&body)
            }
            ProviderKind::GoogleCompatible => {
                let contents: Vec<Value> = prompt
                    .messages
                    .iter()
                    .map(|m| json!({"role": "user", "parts": [{"text": m.content}]}))
                    .collect();
                let mut generation = json!({"maxOutputTokens": self.cfg.max_output_tokens});
                if let Some(t) = self.cfg.temperature {
                    generation["temperature"] = json!(t);
                }
                http.post(format!(
                    "{endpoint}/v1beta/models/{}:generateContent",
                    self.cfg.model_id
                ))
                .header("x-goog-api-key", key)
                .json(&json!({"contents": contents, "generationConfig": generation}))
            }
            ProviderKind::Mock => unreachable!("mock handled by caller"),
        };

        let response = request.send().map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| AttemptError::Retryable(e.to_string()))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AttemptError::Fatal(ClientError::Auth(format!("{status}: {text}"))));
        }
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            return Err(AttemptError::Retryable(format!("{status}: {text}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(ClientError::ProviderRefusal(format!(
                "{status}: {text}"
            ))));
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Retryable(format!("unparseable response body: {e}")))?;
        extract_text(self.cfg.provider, &body).map_err(AttemptError::Fatal)
    }
}

/// Pulls the completion text out of a provider response body.
pub fn extract_text(provider: ProviderKind, body: &Value) -> Result<String, ClientError> {
    let refusal = |what: &str| ClientError::ProviderRefusal(format!("{what}: {body}"));
    match provider {
        ProviderKind::OpenaiCompatible => {
            let choice = &body["choices"][0];
            if choice["finish_reason"] == "content_filter" {
                return Err(refusal("content filtered"));
            }
            if let Some(r) = choice["message"]["refusal"].as_str() {
                return Err(ClientError::ProviderRefusal(r.to_string()));
            }
            choice["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| refusal("no message content"))
        }
        ProviderKind::AnthropicCompatible => {
            if body["stop_reason"] == "refusal" {
                return Err(refusal("refused"));
            }
            let parts = body["content"].as_array().ok_or_else(|| refusal("no content"))?;
            Ok(parts
                .iter()
                .filter(|p| p["type"] == "text")
                .filter_map(|p| p["text"].as_str())
                .collect::<String>())
        }
        ProviderKind::GoogleCompatible => {
            let Some(candidate) = body["candidates"].get(0) else {
                return Err(refusal("no candidates"));
            };
            if candidate["finishReason"] == "SAFETY" {
                return Err(refusal("blocked"));
            }
            let parts = candidate["content"]["parts"]
                .as_array()
                .ok_or_else(|| refusal("no parts"))?;
            Ok(parts.iter().filter_map(|p| p["text"].as_str()).collect::<String>())
        }
        ProviderKind::Mock => Err(ClientError::Config("mock responses have no wire body".into())),
    }
}

fn mock_complete(mode: &MockMode, prompt: &PromptText) -> Result<String, AttemptError> {
    match mode {
        MockMode::Echo { output } => Ok(output.clone()),
        MockMode::Scripted { outputs, fallback } => outputs
            .get(&prompt.instance_id)
            .or(fallback.as_ref())
            .cloned()
            .ok_or_else(|| {
                AttemptError::Fatal(ClientError::ProviderRefusal(format!(
                    "no scripted output for `{}`",
                    prompt.instance_id
                )))
            }),
        MockMode::RandomLabel { level } => {
            let digest = hex::decode(&prompt.fingerprint).unwrap_or_default();
            let mut seed = [0u8; 32];
            for (dst, src) in seed.iter_mut().zip(digest.iter()) {
                *dst = *src;
            }
            let mut rng = ChaCha8Rng::from_seed(seed);
            let labels = level.labels();
            let pick = labels[rng.gen_range(0..labels.len())];
            Ok(pick.canonical_name(NameStyle::Prompt).to_string())
        }
        MockMode::EchoQuoted => {
            let text = prompt.text();
            let start = text
                .find(QUOTE_OPEN)
                .map(|i| i + QUOTE_OPEN.len())
                .ok_or_else(|| AttemptError::Fatal(ClientError::ProviderRefusal("no quoted text".into())))?;
            let end = text[start..]
                .find(QUOTE_CLOSE)
                .map(|i| start + i)
                .ok_or_else(|| AttemptError::Fatal(ClientError::ProviderRefusal("unterminated quote".into())))?;
            Ok(text[start..end].to_string())
        }
        MockMode::Unavailable => Err(AttemptError::Retryable("mock backend unavailable".into())),
    }
}

/// One model's output for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub model_id: String,
    pub raw_output: String,
    pub parsed: Option<Label>,
    pub fuzzy: bool,
    /// Per-class probabilities indexed by label code, when the producer has them.
    pub probabilities: Option<Vec<f64>>,
    pub parse_error: Option<String>,
    #[serde(default)]
    pub from_cache: bool,
}

impl Prediction {
    /// Builds a prediction by parsing `raw_output` at `level`.
    pub fn from_raw(
        instance_id: impl Into<String>,
        model_id: impl Into<String>,
        raw_output: impl Into<String>,
        level: Level,
    ) -> Self {
        let raw_output = raw_output.into();
        let (parsed, fuzzy, parse_error) = match parse_label(&raw_output, level) {
            Ok(p) => (Some(p.label), p.fuzzy, None),
            Err(e) => (None, false, Some(e.to_string())),
        };
        Prediction {
            instance_id: instance_id.into(),
            model_id: model_id.into(),
            raw_output,
            parsed,
            fuzzy,
            probabilities: None,
            parse_error,
            from_cache: false,
        }
    }

    /// Short digest of the raw output, written to prediction files.
    pub fn raw_fingerprint(&self) -> String {
        let digest = Sha256::digest(self.raw_output.as_bytes());
        hex::encode(&digest[..8])
    }
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// Completes `prompt` through the cache: a hit never reaches the backend,
/// a miss is stored after a successful completion.
pub fn complete_cached(
    client: &LlmClient,
    cache: Option<&ResponseCache>,
    prompt: &PromptText,
) -> Result<(String, bool), ClientError> {
    let Some(cache) = cache else {
        return Ok((client.complete(prompt)?, false));
    };
    let key = cache_key(client.config(), prompt);
    cache.with_key_lock(&key, || {
        if let Some(entry) = cache.get(&key)? {
            return Ok((entry.raw_output, true));
        }
        let raw = client.complete(prompt)?;
        cache.put(&CacheEntry::new(
            key.as_str(),
            client.config().model_id.clone(),
            raw.clone(),
        ))?;
        Ok((raw, false))
    })
}

/// Renders, completes (cache-aware) and parses one instance. Unparseable
/// output is recorded in the prediction rather than returned as an error.
pub fn classify_instance(
    client: &LlmClient,
    spec: &PromptSpec,
    demos: &[Demonstration],
    instance: &QAInstance,
    taxonomy: &LabelTaxonomy,
    cache: Option<&ResponseCache>,
) -> Result<Prediction, PredictError> {
    let prompt = render_prompt(spec, demos, instance, taxonomy)?;
    let (raw, hit) = complete_cached(client, cache, &prompt)?;
    let mut prediction = Prediction::from_raw(&instance.id, &client.config().model_id, raw, spec.level);
    prediction.from_cache = hit;
    Ok(prediction)
}
