use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{prompt_hash, Result, SentimentError};

/// Environment variable holding the LLM credential.
pub const API_KEY_ENV: &str = "NEWSRL_LLM_API_KEY";

#[derive(Clone, Debug, thiserror::Error)]
#[error("{msg}")]
pub struct TransportError {
    pub msg: String,
    pub retryable: bool,
}

/// Anything that answers a single-message chat prompt.
pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, TransportError>;
}

/// OpenAI-compatible `POST {base_url}/chat/completions` client.
#[derive(Clone)]
pub struct HttpBackend {
    base_url: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: String,
}

impl HttpBackend {
    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(base_url: &str, model: &str, timeout: Duration) -> Result<Self, TransportError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| TransportError {
            msg: format!("{API_KEY_ENV} is not set"),
            retryable: false,
        })?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            agent,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> Result<String, TransportError> {
        let body = ChatRequest {
            model: &self.model,
            temperature: 0.0,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
        };
        let url = format!("{}/chat/completions", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| TransportError {
                msg: e.to_string(),
                retryable: true,
            })?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(TransportError {
                msg: format!("HTTP {status} from {url}"),
                retryable: status == 429 || status >= 500,
            });
        }
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(|e| TransportError {
            msg: format!("malformed chat response: {e}"),
            retryable: false,
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError {
                msg: "chat response has no choices".into(),
                retryable: true,
            })
    }
}

/// One line of the fixture file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub prompt_hash: String,
    pub response: String,
}

/// Offline responder answering from recorded `prompt_hash -> response`
/// pairs. Counts every call.
#[derive(Debug, Default)]
pub struct FixtureBackend {
    model: String,
    responses: HashMap<String, String>,
    calls: AtomicUsize,
}

impl FixtureBackend {
    pub fn new(model: impl Into<String>, entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        Self {
            model: model.into(),
            responses: entries.into_iter().map(|e| (e.prompt_hash, e.response)).collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn parse(model: impl Into<String>, reader: impl Read) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| SentimentError::Fixture {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let e: FixtureEntry = serde_json::from_str(&line).map_err(|e| SentimentError::Fixture {
                line: i + 1,
                msg: e.to_string(),
            })?;
            entries.push(e);
        }
        Ok(Self::new(model, entries))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for FixtureBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash = prompt_hash(prompt);
        self.responses.get(&hash).cloned().ok_or_else(|| TransportError {
            msg: format!("no fixture response for prompt {hash}"),
            retryable: false,
        })
    }
}
