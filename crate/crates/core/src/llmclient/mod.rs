//! Chat-completions client with retries, bounded concurrency, an on-disk
//! response cache and a deterministic mock backend.

mod cache;
mod http;
pub mod mock;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::ResponseCache;
pub use http::HttpTransport;
pub use mock::{MockConfig, MockMode, MockResponder, MockTransport};

use crate::prompt::{MessageList, Role};

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-0301";
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("gave up after {attempts} attempts; last failure: {last}")]
    RateLimitedExhausted { attempts: u32, last: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    EndpointError { status: u16, body: String },
    #[error("endpoint returned an empty completion")]
    EmptyCompletion,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("cache error at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: MessageList,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: MessageList, temperature: f64) -> Self {
        ChatRequest { model: model.into(), messages, temperature, max_tokens: DEFAULT_MAX_TOKENS }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: String| Err(LlmError::InvalidRequest(m));
        if self.model.trim().is_empty() {
            return bad("model is empty".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        match self.messages.first() {
            None => bad("no messages".into()),
            Some(m) if m.role == Role::Assistant => bad("first message must be system or user".into()),
            _ => Ok(()),
        }
    }

    /// JSON body sent to the endpoint.
    pub fn body(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

/// SHA-256 over a canonical serialization of the request, as lowercase hex.
pub fn cache_key(req: &ChatRequest) -> String {
    // Struct field order is fixed, so serde_json output is canonical; floats
    // print in their shortest round-trip form.
    let canonical = serde_json::to_vec(req).expect("request serializes");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub cached: bool,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    #[default]
    Mock,
    Http,
}

fn default_model() -> String {
    DEFAULT_MODEL.to_string()
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}
fn default_concurrency() -> usize {
    4
}
fn default_max_attempts() -> u32 {
    5
}
fn default_backoff_base_ms() -> u64 {
    1000
}
fn default_backoff_cap_ms() -> u64 {
    32_000
}
fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    #[serde(default)]
    pub kind: EndpointKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_cap_ms")]
    pub backoff_cap_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub mock: MockConfig,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            kind: EndpointKind::Mock,
            base_url: None,
            model: default_model(),
            api_key_env: default_api_key_env(),
            max_tokens: default_max_tokens(),
            concurrency: default_concurrency(),
            max_attempts: default_max_attempts(),
            backoff_base_ms: default_backoff_base_ms(),
            backoff_cap_ms: default_backoff_cap_ms(),
            timeout_ms: default_timeout_ms(),
            mock: MockConfig::default(),
            cache_dir: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.concurrency == 0 {
            return Err(LlmError::Config("concurrency must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(LlmError::Config("max_attempts must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::Config("max_tokens must be positive".into()));
        }
        if self.kind == EndpointKind::Http && self.base_url.as_deref().is_none_or(str::is_empty) {
            return Err(LlmError::Config("http endpoint needs base_url".into()));
        }
        Ok(())
    }
}

/// Failure of a single exchange below the HTTP status level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout(String),
    Connect(String),
    Other(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        matches!(self, TransportError::Timeout(_) | TransportError::Connect(_))
    }
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Timeout(m) => write!(f, "timeout: {m}"),
            TransportError::Connect(m) => write!(f, "connection failed: {m}"),
            TransportError::Other(m) => f.write_str(m),
        }
    }
}

/// One POST of a request body; returns the HTTP status and response body.
pub trait Transport: Send + Sync {
    fn send(&self, body: &serde_json::Value) -> Result<(u16, String), TransportError>;
}

/// Counting semaphore bounding in-flight requests.
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClientStats {
    pub completions: u64,
    pub cache_hits: u64,
    pub network_requests: u64,
}

pub struct Client {
    config: EndpointConfig,
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    slots: Semaphore,
    completions: AtomicU64,
    cache_hits: AtomicU64,
    network_requests: AtomicU64,
}

impl Client {
    /// Builds the transport described by `config`. `planted` is the
    /// source-to-reference table used by the mock's planted modes.
    pub fn from_config(
        config: &EndpointConfig,
        planted: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Client, LlmError> {
        config.validate()?;
        let transport: Arc<dyn Transport> = match config.kind {
            EndpointKind::Mock => {
                let responder = MockResponder::new(config.mock.clone(), planted.into_iter().collect());
                Arc::new(MockTransport::new(Arc::new(responder)))
            }
            EndpointKind::Http => Arc::new(HttpTransport::from_config(config)?),
        };
        Client::with_transport(config, transport)
    }

    pub fn with_transport(config: &EndpointConfig, transport: Arc<dyn Transport>) -> Result<Client, LlmError> {
        config.validate()?;
        let cache = config.cache_dir.as_deref().map(ResponseCache::open).transpose()?;
        Ok(Client {
            config: config.clone(),
            transport,
            cache,
            slots: Semaphore::new(config.concurrency),
            completions: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            network_requests: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            completions: self.completions.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            network_requests: self.network_requests.load(Ordering::Relaxed),
        }
    }

    /// Builds a request for `messages` from the endpoint's model settings.
    pub fn request(&self, messages: MessageList, temperature: f64) -> ChatRequest {
        ChatRequest { model: self.config.model.clone(), messages, temperature, max_tokens: self.config.max_tokens }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ceiling =
            self.config.backoff_base_ms.saturating_mul(1u64 << (attempt - 1).min(32)).min(self.config.backoff_cap_ms);
        Duration::from_millis(rand::rng().random_range(0..=ceiling))
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<CompletionResult, LlmError> {
        req.validate()?;
        let started = Instant::now();
        let key = cache_key(req);
        if let Some(cache) = &self.cache {
            if let Some(body) = cache.get(&key)? {
                if let Ok(text) = parse_content(&body) {
                    self.completions.fetch_add(1, Ordering::Relaxed);
                    self.cache_hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(CompletionResult {
                        text,
                        cached: true,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: 1,
                    });
                }
                log::warn!("ignoring unreadable cache entry {key}");
            }
        }

        let body = req.body();
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            let outcome = {
                let _permit = self.slots.acquire();
                self.network_requests.fetch_add(1, Ordering::Relaxed);
                self.transport.send(&body)
            };
            match outcome {
                Ok((status, text)) if (200..300).contains(&status) => {
                    let content = parse_content(&text)?;
                    if let Some(cache) = &self.cache {
                        cache.put(&key, &text)?;
                    }
                    self.completions.fetch_add(1, Ordering::Relaxed);
                    return Ok(CompletionResult {
                        text: content,
                        cached: false,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempt,
                    });
                }
                Ok((status, text)) if status == 429 || status >= 500 => {
                    last = format!("HTTP {status}: {}", truncate(&text, 200));
                }
                Ok((status, text)) => return Err(LlmError::EndpointError { status, body: text }),
                Err(e) if e.retryable() => last = e.to_string(),
                Err(e) => return Err(LlmError::EndpointError { status: 0, body: e.to_string() }),
            }
            if attempt < self.config.max_attempts {
                let wait = self.backoff(attempt);
                log::debug!("attempt {attempt} failed ({last}); retrying in {wait:?}");
                std::thread::sleep(wait);
            }
        }
        Err(LlmError::RateLimitedExhausted { attempts: self.config.max_attempts, last })
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Extracts `choices[0].message.content`; blank content is an error.
pub fn parse_content(body: &str) -> Result<String, LlmError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(format!("invalid JSON: {e}")))?;
    let content = value
        .pointer("/choices/0/message/content")
        .ok_or_else(|| LlmError::MalformedResponse("missing choices[0].message.content".into()))?;
    match content {
        serde_json::Value::Null => Err(LlmError::EmptyCompletion),
        serde_json::Value::String(s) if s.trim().is_empty() => Err(LlmError::EmptyCompletion),
        serde_json::Value::String(s) => Ok(s.clone()),
        other => Err(LlmError::MalformedResponse(format!("content is not a string: {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::ChatMessage;
    use proptest::prelude::*;

    fn req(t: f64) -> ChatRequest {
        ChatRequest::new(
            DEFAULT_MODEL,
            vec![
                ChatMessage::system("You are a machine translation system."),
                ChatMessage::user("Please provide the German translation for the following sentence: Hello"),
            ],
            t,
        )
    }

    #[test]
    fn key_is_fixed_length_and_stable() {
        let a = cache_key(&req(0.0));
        assert_eq!(a.len(), 64);
        assert_eq!(a, cache_key(&req(0.0)));
        assert_ne!(a, cache_key(&req(0.2)));
    }

    #[test]
    fn key_sensitive_to_message_order() {
        let r = req(0.0);
        let mut swapped = r.clone();
        swapped.messages.swap(0, 1);
        assert_ne!(cache_key(&r), cache_key(&swapped));
        let mut more = r.clone();
        more.max_tokens = 512;
        assert_ne!(cache_key(&r), cache_key(&more));
        let mut model = r.clone();
        model.model.push('x');
        assert_ne!(cache_key(&r), cache_key(&model));
    }

    #[test]
    fn request_validation() {
        assert!(req(0.0).validate().is_ok());
        assert!(req(2.0).validate().is_ok());
        assert!(req(2.1).validate().is_err());
        assert!(req(-0.1).validate().is_err());
        let mut r = req(0.0);
        r.messages.clear();
        assert!(r.validate().is_err());
        let mut r = req(0.0);
        r.messages.insert(0, ChatMessage::assistant("hi"));
        assert!(r.validate().is_err());
        let mut r = req(0.0);
        r.max_tokens = 0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn content_parsing() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"Hallo"}}]}"#;
        assert_eq!(parse_content(ok).unwrap(), "Hallo");
        let blank = r#"{"choices":[{"message":{"role":"assistant","content":"  "}}]}"#;
        assert!(matches!(parse_content(blank), Err(LlmError::EmptyCompletion)));
        let null = r#"{"choices":[{"message":{"role":"assistant","content":null}}]}"#;
        assert!(matches!(parse_content(null), Err(LlmError::EmptyCompletion)));
        assert!(matches!(parse_content("{}"), Err(LlmError::MalformedResponse(_))));
        assert!(matches!(parse_content("nope"), Err(LlmError::MalformedResponse(_))));
    }

    #[test]
    fn endpoint_defaults() {
        let c: EndpointConfig = toml::from_str("").unwrap();
        assert_eq!(c, EndpointConfig::default());
        assert_eq!(c.max_tokens, 1024);
        assert_eq!(c.max_attempts, 5);
        assert_eq!(c.model, "gpt-3.5-turbo-0301");
        let http: EndpointConfig = toml::from_str("kind = \"http\"").unwrap();
        assert!(http.validate().is_err());
    }

    proptest! {
        #[test]
        fn equal_requests_equal_keys(t in 0.0f64..=2.0, text in ".{1,40}") {
            let mk = || ChatRequest::new(DEFAULT_MODEL, vec![ChatMessage::user(text.clone())], t);
            prop_assert_eq!(cache_key(&mk()), cache_key(&mk()));
            let mut other = mk();
            other.messages[0].content.push(' ');
            prop_assert_ne!(cache_key(&mk()), cache_key(&other));
        }
    }
}
