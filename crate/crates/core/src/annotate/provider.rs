//! Text-completion providers used to synthesize rationales.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
}

impl ProviderError {
    /// Transport failures, timeouts, rate limiting and server errors are retried.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) | ProviderError::Timeout => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            ProviderError::BadResponse(_) | ProviderError::MissingCredentials(_) => false,
        }
    }
}

#[async_trait]
pub trait RationaleProvider: Send + Sync {
    /// Model identifier; part of the cache key.
    fn model_id(&self) -> &str;

    async fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
}

/// Provider settings. Credentials are never stored here, only the name of
/// the environment variable that holds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub provider: ProviderKind,
    /// Chat-completion endpoint URL.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
    pub temperature: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            provider: ProviderKind::Mock,
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "mock-rationale-v1".into(),
            api_key_env: None,
            max_attempts: 5,
            backoff_base_ms: 500,
            timeout_secs: 60,
            temperature: 0.0,
        }
    }
}

/// Builds the provider named by `cfg.provider`.
pub fn provider_from_config(cfg: &ProviderConfig) -> Result<Box<dyn RationaleProvider>, ProviderError> {
    Ok(match cfg.provider {
        ProviderKind::Mock => Box::new(MockProvider::templates(&cfg.model)),
        ProviderKind::Http => Box::new(HttpChatProvider::new(cfg)?),
    })
}

/// OpenAI-style chat-completion client.
pub struct HttpChatProvider {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key_env: Option<String>,
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

impl HttpChatProvider {
    pub fn new(cfg: &ProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(HttpChatProvider {
            client,
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            api_key_env: cfg.api_key_env.clone(),
            temperature: cfg.temperature,
        })
    }
}

#[async_trait]
impl RationaleProvider for HttpChatProvider {
    fn model_id(&self) -> &str {
        &self.model
    }

    async fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var).map_err(|_| ProviderError::MissingCredentials(var.clone()))?;
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(ProviderError::Status {
                status: status.as_u16(),
                body: body.chars().take(500).collect(),
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .await
            .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::BadResponse("no message content".into()))
    }
}

const MOCK_SENTENCES: [&str; 8] = [
    "I want to see more options before deciding.",
    "I am looking for a product that fits what I need.",
    "I want to compare prices and reviews on this page.",
    "I think this is the most relevant choice for me right now.",
    "I want to narrow down the results to find something suitable.",
    "I need to check the details before I commit.",
    "I am curious whether there is something better further down.",
    "I have found what I was looking for and want to move ahead.",
];

enum MockReply {
    Templates,
    Fixed(String),
    FailTimes { failures: usize, reply: String },
}

/// Offline provider. Template mode picks a sentence from a fixed list by
/// hashing the prompt, so identical prompts always get identical replies.
pub struct MockProvider {
    model: String,
    reply: MockReply,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn templates(model: &str) -> Self {
        MockProvider {
            model: model.to_string(),
            reply: MockReply::Templates,
            calls: AtomicUsize::new(0),
        }
    }

    /// Always answers with `reply`.
    pub fn fixed(model: &str, reply: &str) -> Self {
        MockProvider {
            model: model.to_string(),
            reply: MockReply::Fixed(reply.to_string()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Fails with a retryable error for the first `failures` calls, then answers.
    pub fn flaky(model: &str, failures: usize, reply: &str) -> Self {
        MockProvider {
            model: model.to_string(),
            reply: MockReply::FailTimes {
                failures,
                reply: reply.to_string(),
            },
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl RationaleProvider for MockProvider {
    fn model_id(&self) -> &str {
        &self.model
    }

    async fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.reply {
            MockReply::Templates => {
                let digest = Sha256::digest(prompt.as_bytes());
                let pick = digest[0] as usize % MOCK_SENTENCES.len();
                Ok(MOCK_SENTENCES[pick].to_string())
            }
            MockReply::Fixed(s) => Ok(s.clone()),
            MockReply::FailTimes { failures, reply } => {
                if n < *failures {
                    Err(ProviderError::Status {
                        status: 503,
                        body: "unavailable".into(),
                    })
                } else {
                    Ok(reply.clone())
                }
            }
        }
    }
}
