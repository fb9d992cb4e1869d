use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatProvider, ChatRequest, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_secs() -> u64 {
    120
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

impl HttpSettings {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpSettings {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout_secs: default_timeout_secs(),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub(crate) fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Blocking POST with bounded retries and exponential backoff. Retries on
/// transport failures, 429 and 5xx; other statuses fail immediately.
pub(crate) fn post_json_with_retry(
    client: &reqwest::blocking::Client,
    settings: &HttpSettings,
    url: &str,
    body: &serde_json::Value,
) -> Result<serde_json::Value, ProviderError> {
    let attempts = settings.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let wait = settings
                .backoff_ms
                .saturating_mul(1 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_millis(wait));
        }
        let mut req = client.post(url).json(body);
        if let Some(key) = &settings.api_key {
            req = req.bearer_auth(key);
        }
        match req.send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp
                        .json::<serde_json::Value>()
                        .map_err(|e| ProviderError::BadResponse(e.to_string()));
                }
                let text = resp.text().unwrap_or_default();
                if status.as_u16() == 429 || status.is_server_error() {
                    log::warn!(
                        "{url} returned {status}, attempt {}/{attempts}",
                        attempt + 1
                    );
                    last = format!("HTTP {status}: {text}");
                    continue;
                }
                return Err(ProviderError::Status {
                    status: status.as_u16(),
                    body: text,
                });
            }
            Err(e) => {
                log::warn!("{url} failed: {e}, attempt {}/{attempts}", attempt + 1);
                last = e.to_string();
            }
        }
    }
    Err(ProviderError::Transport {
        attempts,
        message: last,
    })
}

pub(crate) fn build_client(
    settings: &HttpSettings,
) -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(settings.timeout_secs))
        .build()
        .map_err(|e| ProviderError::Other(e.to_string()))
}

/// Chat-completions client speaking the OpenAI wire format.
pub struct HttpChatProvider {
    settings: HttpSettings,
    client: reqwest::blocking::Client,
}

impl HttpChatProvider {
    pub fn new(settings: HttpSettings) -> Result<Self, ProviderError> {
        let client = build_client(&settings)?;
        Ok(HttpChatProvider { settings, client })
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut messages = vec![json!({"role": "user", "content": request.rendered_prompt})];
        for f in &request.followups {
            messages.push(json!({"role": "assistant", "content": f.assistant}));
            messages.push(json!({"role": "user", "content": f.user}));
        }
        json!({
            "model": self.settings.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let url = self.settings.endpoint("chat/completions");
        let resp = post_json_with_retry(
            &self.client,
            &self.settings,
            &url,
            &self.request_body(request),
        )?;
        resp.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| {
                ProviderError::BadResponse(format!("no choices[0].message.content in {resp}"))
            })
    }

    fn id(&self) -> String {
        format!("http:{}", self.settings.model)
    }
}
