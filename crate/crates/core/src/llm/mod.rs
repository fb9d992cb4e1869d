//! Chat-completion providers, prompt templates and reply parsing.
//!
//! Every pipeline stage talks to the model through [`ChatProvider`]. Three
//! backends ship: an OpenAI-compatible HTTP client, a rule-driven scripted
//! mock, and record/replay cassettes keyed by a digest of the prompt.

mod cassette;
pub(crate) mod http;
mod json;
pub mod prompts;
mod script;

pub use cassette::{prompt_digest, Cassette, CassetteEntry, CassetteMode};
pub use http::{HttpChatProvider, HttpSettings};
pub use json::{extract_json, JsonExtractError};
pub use prompts::{PromptSet, TemplateError};
pub use script::{ScriptRule, ScriptedProvider};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("no cassette entry for '{template}' (digest {digest})")]
    CassetteMiss { template: String, digest: String },
    #[error("no scripted reply for '{template}'")]
    ScriptMiss { template: String },
    #[error("{0}")]
    Other(String),
}

/// A user turn appended after a rejected reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowUp {
    pub assistant: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub template_name: String,
    pub rendered_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub followups: Vec<FollowUp>,
}

impl ChatRequest {
    pub fn new(template_name: impl Into<String>, rendered_prompt: impl Into<String>) -> Self {
        ChatRequest {
            template_name: template_name.into(),
            rendered_prompt: rendered_prompt.into(),
            temperature: 0.0,
            max_tokens: 2048,
            followups: Vec::new(),
        }
    }

    pub fn with_decoding(mut self, decoding: Decoding) -> Self {
        self.temperature = decoding.temperature;
        self.max_tokens = decoding.max_tokens;
        self
    }

    /// Copy of this request with a corrective turn appended.
    pub fn with_feedback(&self, rejected_reply: &str, correction: impl Into<String>) -> Self {
        let mut next = self.clone();
        next.followups.push(FollowUp {
            assistant: rejected_reply.to_string(),
            user: correction.into(),
        });
        next
    }

    /// Prompt plus any follow-up turns, as one text (scripted matching, logs).
    pub fn conversation_text(&self) -> String {
        let mut text = self.rendered_prompt.clone();
        for f in &self.followups {
            text.push_str("\n\n");
            text.push_str(&f.assistant);
            text.push_str("\n\n");
            text.push_str(&f.user);
        }
        text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature: 0.0,
            max_tokens: 2048,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;

    /// Short identifier used in traces.
    fn id(&self) -> String {
        "provider".to_string()
    }
}

impl<F> ChatProvider for F
where
    F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self(request)
    }

    fn id(&self) -> String {
        "closure".to_string()
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

/// One prompt/reply pair as recorded in traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt_name: String,
    pub rendered_prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub followups: Vec<FollowUp>,
    pub raw_reply: String,
}

impl Exchange {
    pub fn new(request: &ChatRequest, reply: &str) -> Self {
        Exchange {
            prompt_name: request.template_name.clone(),
            rendered_prompt: request.rendered_prompt.clone(),
            followups: request.followups.clone(),
            raw_reply: reply.to_string(),
        }
    }
}
