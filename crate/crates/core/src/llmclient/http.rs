use std::time::Duration;

use super::{EndpointConfig, LlmError, Transport, TransportError};

/// OpenAI-compatible `POST {base_url}/chat/completions` with bearer auth.
pub struct HttpTransport {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    /// The API key is read from the variable named by `api_key_env`. A missing
    /// key is allowed so local servers without auth keep working.
    pub fn from_config(config: &EndpointConfig) -> Result<HttpTransport, LlmError> {
        let base = config.base_url.as_deref().ok_or_else(|| LlmError::Config("http endpoint needs base_url".into()))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without authorization", config.api_key_env);
        }
        HttpTransport::new(base, api_key, Duration::from_millis(config.timeout_ms))
    }

    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<HttpTransport, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(HttpTransport { url: format!("{}/chat/completions", base_url.trim_end_matches('/')), api_key, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Transport for HttpTransport {
    fn send(&self, body: &serde_json::Value) -> Result<(u16, String), TransportError> {
        let mut request = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                TransportError::Timeout(e.to_string())
            } else if e.is_connect() || e.is_request() {
                TransportError::Connect(e.to_string())
            } else {
                TransportError::Other(e.to_string())
            }
        };
        let response = request.send().map_err(classify)?;
        let status = response.status().as_u16();
        let text = response.text().map_err(classify)?;
        Ok((status, text))
    }
}
