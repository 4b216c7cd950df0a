//! Deterministic stand-in for a chat-completions endpoint.
//!
//! The mock recovers the sentence being translated from the last user
//! message and answers according to its mode:
//!
//! - `echo`: the sentence itself.
//! - `planted`: the planted reference for that sentence, else the sentence.
//! - `temperature-noise[=s]`: the planted answer with each token deleted when
//!   its hash-derived uniform falls below `s * temperature`.
//! - `hallucinate[=s]`: the planted answer wrapped in a boilerplate template
//!   with probability `s * temperature`.
//! - `scripted-failures:429,500,...`: each distinct request first receives the
//!   listed statuses, then behaves as `planted`.
//!
//! Random draws are hashes of `(seed, sentence, position)`, so the same
//! request always gets the same answer and corruption at a lower temperature
//! is a subset of the corruption at a higher one.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Transport, TransportError};
use crate::prompt::{extract_query, extract_target_name};

pub const DEFAULT_NOISE_SCALE: f64 = 0.3;
pub const DEFAULT_HALLUCINATION_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default)]
pub enum MockMode {
    Echo,
    #[default]
    Planted,
    TemperatureNoise {
        scale: f64,
    },
    Hallucinate {
        scale: f64,
    },
    ScriptedFailures(Vec<u16>),
}

impl fmt::Display for MockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockMode::Echo => f.write_str("echo"),
            MockMode::Planted => f.write_str("planted"),
            MockMode::TemperatureNoise { scale } => write!(f, "temperature-noise={scale}"),
            MockMode::Hallucinate { scale } => write!(f, "hallucinate={scale}"),
            MockMode::ScriptedFailures(codes) => {
                let codes: Vec<String> = codes.iter().map(u16::to_string).collect();
                write!(f, "scripted-failures:{}", codes.join(","))
            }
        }
    }
}

fn parse_scale(value: Option<&str>, default: f64, mode: &str) -> Result<f64, String> {
    match value {
        None => Ok(default),
        Some(v) => {
            let s: f64 = v.parse().map_err(|_| format!("bad scale `{v}` for {mode}"))?;
            if s.is_finite() && s >= 0.0 {
                Ok(s)
            } else {
                Err(format!("scale for {mode} must be a non-negative number"))
            }
        }
    }
}

impl FromStr for MockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(codes) = s.strip_prefix("scripted-failures:") {
            let codes = codes
                .split(',')
                .map(|c| c.trim().parse::<u16>().map_err(|_| format!("bad status `{c}`")))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(MockMode::ScriptedFailures(codes));
        }
        let (name, value) = match s.split_once('=') {
            Some((n, v)) => (n, Some(v)),
            None => (s, None),
        };
        match name {
            "echo" if value.is_none() => Ok(MockMode::Echo),
            "planted" | "planted-table" if value.is_none() => Ok(MockMode::Planted),
            "temperature-noise" => Ok(MockMode::TemperatureNoise {
                scale: parse_scale(value, DEFAULT_NOISE_SCALE, name)?,
            }),
            "hallucinate" => Ok(MockMode::Hallucinate {
                scale: parse_scale(value, DEFAULT_HALLUCINATION_SCALE, name)?,
            }),
            _ => Err(format!(
                "unknown mock mode `{s}` (expected echo, planted, temperature-noise[=s], hallucinate[=s] or scripted-failures:CODES)"
            )),
        }
    }
}

impl Serialize for MockMode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MockMode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockConfig {
    #[serde(default)]
    pub mode: MockMode,
    #[serde(default)]
    pub seed: u64,
    /// Simulated service time per request.
    #[serde(default)]
    pub latency_ms: u64,
}

/// Boilerplate wrappers used by the hallucination mode; each is removed by
/// one rule of the default scrub catalog.
const HALLUCINATION_TEMPLATES: [&str; 4] = [
    "{src} can be translated into {tgt} as {out}",
    "{src} would be translated to: {out}",
    "{out} (Note: the translation may vary depending on context.)",
    "{out} Translation may vary depending on context.",
];

/// Uniform in [0, 1) derived from a hash of the inputs.
fn unit_uniform(seed: u64, label: &str, text: &str, index: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.update([0]);
    h.update(text.as_bytes());
    h.update([0]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let bits = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

/// Splits text into deletable units: whitespace-separated words, with CJK
/// ideographs as single units. The flag records a preceding space.
fn units(text: &str) -> Vec<(bool, String)> {
    let mut out: Vec<(bool, String)> = Vec::new();
    let mut space = false;
    let mut current: Option<(bool, String)> = None;
    for c in text.chars() {
        if c.is_whitespace() {
            out.extend(current.take());
            space = true;
        } else if is_ideograph(c) {
            out.extend(current.take());
            out.push((space, c.to_string()));
            space = false;
        } else {
            match current.as_mut() {
                Some((_, s)) => s.push(c),
                None => current = Some((space, c.to_string())),
            }
            space = false;
        }
    }
    out.extend(current);
    out
}

fn is_ideograph(c: char) -> bool {
    matches!(c, '\u{3400}'..='\u{4dbf}' | '\u{4e00}'..='\u{9fff}' | '\u{f900}'..='\u{faff}' | '\u{3000}'..='\u{303f}' | '\u{ff00}'..='\u{ffef}')
}

/// Deletes each unit whose uniform is below `p`; at least one unit survives.
pub fn corrupt(text: &str, p: f64, seed: u64, key: &str) -> String {
    let units = units(text);
    if units.is_empty() || p <= 0.0 {
        return text.to_string();
    }
    let draws: Vec<f64> = (0..units.len()).map(|i| unit_uniform(seed, "noise", key, i as u64)).collect();
    let mut keep: Vec<bool> = draws.iter().map(|u| *u >= p).collect();
    if !keep.iter().any(|k| *k) {
        let best = draws.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
        keep[best] = true;
    }
    let mut out = String::with_capacity(text.len());
    for ((space, unit), k) in units.into_iter().zip(keep) {
        if k {
            if space && !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&unit);
        }
    }
    out
}

/// Wraps `text` in a boilerplate template when the request's injection draw
/// falls below `p`.
pub fn inject(text: &str, src: &str, tgt: &str, p: f64, seed: u64) -> Option<String> {
    if unit_uniform(seed, "inject", src, 0) >= p {
        return None;
    }
    let pick = (unit_uniform(seed, "template", src, 0) * HALLUCINATION_TEMPLATES.len() as f64) as usize;
    let template = HALLUCINATION_TEMPLATES[pick.min(HALLUCINATION_TEMPLATES.len() - 1)];
    Some(template.replace("{src}", src).replace("{tgt}", tgt).replace("{out}", text))
}

pub struct MockResponder {
    config: MockConfig,
    table: HashMap<String, String>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
    attempts: Mutex<HashMap<String, usize>>,
}

impl MockResponder {
    pub fn new(config: MockConfig, table: HashMap<String, String>) -> MockResponder {
        MockResponder {
            config,
            table,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            high_water: AtomicUsize::new(0),
            attempts: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    /// Number of requests received.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Largest number of requests observed in flight at once.
    pub fn max_in_flight(&self) -> usize {
        self.high_water.load(Ordering::SeqCst)
    }

    /// Answers one chat-completions request body with `(status, body)`.
    pub fn respond(&self, body: &serde_json::Value) -> (u16, String) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.high_water.fetch_max(now, Ordering::SeqCst);
        if self.config.latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.config.latency_ms));
        }
        let reply = self.answer(body);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        reply
    }

    fn answer(&self, body: &serde_json::Value) -> (u16, String) {
        let Some(content) = body
            .get("messages")
            .and_then(|m| m.as_array())
            .and_then(|m| m.iter().rev().find(|m| m.get("role").and_then(|r| r.as_str()) == Some("user")))
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
        else {
            return error(400, "request has no user message");
        };
        let temperature = body.get("temperature").and_then(|t| t.as_f64()).unwrap_or(0.0);
        let model = body.get("model").and_then(|m| m.as_str()).unwrap_or("mock");
        let query = extract_query(content).trim();
        let planted = self.table.get(query).map_or(query, String::as_str);
        let seed = self.config.seed;

        let text = match &self.config.mode {
            MockMode::Echo => query.to_string(),
            MockMode::Planted => planted.to_string(),
            MockMode::TemperatureNoise { scale } => corrupt(planted, (scale * temperature).min(1.0), seed, query),
            MockMode::Hallucinate { scale } => {
                let tgt = extract_target_name(content).unwrap_or("the target language");
                inject(planted, query, tgt, (scale * temperature).min(1.0), seed).unwrap_or_else(|| planted.to_string())
            }
            MockMode::ScriptedFailures(codes) => {
                let key = hex::encode(Sha256::digest(body.to_string().as_bytes()));
                let n = {
                    let mut attempts = self.attempts.lock().unwrap();
                    let n = attempts.entry(key).or_insert(0);
                    *n += 1;
                    *n - 1
                };
                if let Some(&status) = codes.get(n) {
                    return error(status, "scripted failure");
                }
                planted.to_string()
            }
        };
        let id = hex::encode(&Sha256::digest(body.to_string().as_bytes())[..6]);
        let reply = serde_json::json!({
            "id": format!("mock-{id}"),
            "object": "chat.completion",
            "model": model,
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": text},
                "finish_reason": "stop",
            }],
        });
        (200, reply.to_string())
    }
}

fn error(status: u16, message: &str) -> (u16, String) {
    (status, serde_json::json!({"error": {"message": message, "code": status}}).to_string())
}

/// In-process transport backed by a shared responder.
pub struct MockTransport {
    responder: Arc<MockResponder>,
}

impl MockTransport {
    pub fn new(responder: Arc<MockResponder>) -> MockTransport {
        MockTransport { responder }
    }

    pub fn responder(&self) -> &Arc<MockResponder> {
        &self.responder
    }
}

impl Transport for MockTransport {
    fn send(&self, body: &serde_json::Value) -> Result<(u16, String), TransportError> {
        Ok(self.responder.respond(body))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llmclient::{parse_content, ChatRequest, Client, EndpointConfig, LlmError, DEFAULT_MODEL};
    use crate::prompt::ChatMessage;
    use proptest::prelude::*;

    fn request(src: &str, t: f64) -> ChatRequest {
        ChatRequest::new(
            DEFAULT_MODEL,
            vec![
                ChatMessage::system("You are a machine translation system."),
                ChatMessage::user(format!("Please provide the Romanian translation for the following sentence: {src}")),
            ],
            t,
        )
    }

    fn client(mode: MockMode, table: &[(&str, &str)], cache: Option<&std::path::Path>) -> (Client, Arc<MockResponder>) {
        let config = EndpointConfig {
            mock: MockConfig { mode, seed: 7, latency_ms: 0 },
            cache_dir: cache.map(|p| p.to_path_buf()),
            backoff_base_ms: 1,
            backoff_cap_ms: 2,
            ..EndpointConfig::default()
        };
        let table = table.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let responder = Arc::new(MockResponder::new(config.mock.clone(), table));
        let c = Client::with_transport(&config, Arc::new(MockTransport::new(responder.clone()))).unwrap();
        (c, responder)
    }

    #[test]
    fn mode_parsing() {
        for s in ["echo", "planted", "temperature-noise=0.3", "hallucinate=0.5", "scripted-failures:429,429"] {
            assert_eq!(s.parse::<MockMode>().unwrap().to_string(), s);
        }
        assert_eq!("temperature-noise".parse::<MockMode>().unwrap(), MockMode::TemperatureNoise { scale: 0.3 });
        assert_eq!("planted-table".parse::<MockMode>().unwrap(), MockMode::Planted);
        assert!("loud".parse::<MockMode>().is_err());
        assert!("temperature-noise=-1".parse::<MockMode>().is_err());
        assert!("scripted-failures:abc".parse::<MockMode>().is_err());
    }

    #[test]
    fn echo_returns_payload() {
        let (c, _) = client(MockMode::Echo, &[], None);
        let r = c.complete(&request("Bună ziua, lume.", 0.7)).unwrap();
        assert_eq!(r.text, "Bună ziua, lume.");
        assert!(!r.cached);
        assert_eq!(r.attempt_count, 1);
    }

    #[test]
    fn second_request_is_cached() {
        let dir = tempfile::tempdir().unwrap();
        let (c, mock) = client(MockMode::Planted, &[("a b", "x y")], Some(dir.path()));
        let first = c.complete(&request("a b", 0.0)).unwrap();
        let second = c.complete(&request("a b", 0.0)).unwrap();
        assert_eq!(first.text, "x y");
        assert!(second.cached);
        assert_eq!(second.text, first.text);
        assert_eq!(second.attempt_count, 1);
        assert_eq!(mock.calls(), 1);
        assert_eq!(c.stats().cache_hits, 1);
    }

    #[test]
    fn scripted_429_twice_then_success() {
        let (c, mock) = client(MockMode::ScriptedFailures(vec![429, 429]), &[("s", "t")], None);
        let r = c.complete(&request("s", 0.0)).unwrap();
        assert_eq!(r.attempt_count, 3);
        assert_eq!(r.text, "t");
        assert_eq!(mock.calls(), 3);
    }

    #[test]
    fn exhaustion_and_client_errors() {
        let (c, _) = client(MockMode::ScriptedFailures(vec![503; 5]), &[], None);
        assert!(matches!(c.complete(&request("s", 0.0)), Err(LlmError::RateLimitedExhausted { attempts: 5, .. })));
        let (c, mock) = client(MockMode::ScriptedFailures(vec![400]), &[], None);
        match c.complete(&request("s", 0.0)) {
            Err(LlmError::EndpointError { status: 400, body }) => assert!(body.contains("scripted failure")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn failures_are_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let (c, _) = client(MockMode::ScriptedFailures(vec![429; 5]), &[], Some(dir.path()));
        assert!(c.complete(&request("s", 0.0)).is_err());
        assert_eq!(super::super::ResponseCache::open(dir.path()).unwrap().len(), 0);
    }

    #[test]
    fn concurrency_bound_holds() {
        let config = EndpointConfig {
            concurrency: 3,
            mock: MockConfig { mode: MockMode::Echo, seed: 0, latency_ms: 15 },
            ..EndpointConfig::default()
        };
        let responder = Arc::new(MockResponder::new(config.mock.clone(), HashMap::new()));
        let c = Client::with_transport(&config, Arc::new(MockTransport::new(responder.clone()))).unwrap();
        std::thread::scope(|s| {
            for i in 0..12 {
                let c = &c;
                s.spawn(move || c.complete(&request(&format!("sentence {i}"), 0.0)).unwrap());
            }
        });
        assert_eq!(responder.calls(), 12);
        assert!(responder.max_in_flight() <= 3);
        assert!(responder.max_in_flight() >= 2);
    }

    #[test]
    fn noise_free_at_zero_temperature() {
        let (c, _) = client(MockMode::TemperatureNoise { scale: 1.0 }, &[("s", "the planted reference text")], None);
        assert_eq!(c.complete(&request("s", 0.0)).unwrap().text, "the planted reference text");
        let noisy = c.complete(&request("s", 1.0)).unwrap().text;
        assert!(!noisy.is_empty());
    }

    #[test]
    fn hallucination_wraps_with_target_name() {
        let body = request("我们今天讨论", 1.0).body();
        let m = MockResponder::new(
            MockConfig { mode: MockMode::Hallucinate { scale: 1.0 }, seed: 1, latency_ms: 0 },
            HashMap::new(),
        );
        let text = parse_content(&m.respond(&body).1).unwrap();
        assert!(text.contains("我们今天讨论"));
        assert_ne!(text, "我们今天讨论");
    }

    #[test]
    fn units_split_cjk() {
        let u: Vec<String> = units("ab 我们 cd").into_iter().map(|(_, s)| s).collect();
        assert_eq!(u, ["ab", "我", "们", "cd"]);
    }

    proptest! {
        #[test]
        fn corruption_is_nested(words in prop::collection::vec("[a-z]{1,6}", 1..20), lo in 0.0f64..1.0, hi in 0.0f64..1.0, seed in any::<u64>()) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let text = words.join(" ");
            let a = corrupt(&text, lo, seed, "k");
            let b = corrupt(&text, hi, seed, "k");
            prop_assert!(!b.is_empty());
            prop_assert!(b.split(' ').count() <= a.split(' ').count());
            prop_assert_eq!(corrupt(&text, 0.0, seed, "k"), text);
        }
    }
}
