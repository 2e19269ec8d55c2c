//! Chat-completion clients: an HTTP client for OpenAI-compatible APIs plus
//! scripted/closure clients for offline replay and tests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::template::Message;
use super::PromptError;

/// Transport abstraction over a chat-completion endpoint.
pub trait ChatClient {
    fn model_name(&self) -> &str;
    fn complete(&self, messages: &[Message]) -> Result<String, PromptError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmClientConfig {
    pub provider: String,
    pub model: String,
    /// Sampling temperature; the benchmarking protocol pins this to 0.
    #[serde(default)]
    pub temperature: f64,
    /// Format-failure retries after the initial request (at most 5).
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    pub base_url: String,
}

fn default_max_retries() -> usize {
    5
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_api_key_env() -> String {
    "LLM_API_KEY".to_string()
}

impl LlmClientConfig {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.model.is_empty() {
            return Err(PromptError::InvalidClientConfig("model is empty".into()));
        }
        if self.base_url.is_empty() {
            return Err(PromptError::InvalidClientConfig("base_url is empty".into()));
        }
        if self.temperature != 0.0 {
            return Err(PromptError::InvalidClientConfig(format!(
                "temperature must be 0, got {}",
                self.temperature
            )));
        }
        if self.max_retries > 5 {
            return Err(PromptError::InvalidClientConfig(format!(
                "max_retries must be at most 5, got {}",
                self.max_retries
            )));
        }
        Ok(())
    }
}

/// Client for OpenAI-compatible `/chat/completions` endpoints.
pub struct HttpChatClient {
    config: LlmClientConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(config: LlmClientConfig) -> Result<HttpChatClient, PromptError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).ok();
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| PromptError::Transport(e.to_string()))?;
        Ok(HttpChatClient { config, api_key, http })
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [Message],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

impl ChatClient for HttpChatClient {
    fn model_name(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, messages: &[Message]) -> Result<String, PromptError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = ChatRequest {
            model: &self.config.model,
            temperature: self.config.temperature,
            messages,
        };
        let mut req = self.http.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| PromptError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(PromptError::Transport(format!("{status}: {text}")));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| PromptError::Transport(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| PromptError::Transport("response has no choices".into()))
    }
}

/// Test client that returns queued responses in order and counts calls.
pub struct ScriptedClient {
    model: String,
    responses: Mutex<Vec<String>>,
    calls: AtomicUsize,
}

impl ScriptedClient {
    pub fn new(model: &str, responses: Vec<String>) -> ScriptedClient {
        let mut queue = responses;
        queue.reverse(); // pop() then yields in submission order
        ScriptedClient {
            model: model.to_string(),
            responses: Mutex::new(queue),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for ScriptedClient {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, _messages: &[Message]) -> Result<String, PromptError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.responses
            .lock()
            .expect("scripted client lock")
            .pop()
            .ok_or_else(|| PromptError::Transport("scripted client exhausted".into()))
    }
}

/// Closure-backed client, handy for gold-oracle stubs in tests.
pub struct FnClient<F: Fn(&[Message]) -> Result<String, PromptError>> {
    model: String,
    f: F,
}

impl<F: Fn(&[Message]) -> Result<String, PromptError>> FnClient<F> {
    pub fn new(model: &str, f: F) -> FnClient<F> {
        FnClient {
            model: model.to_string(),
            f,
        }
    }
}

impl<F: Fn(&[Message]) -> Result<String, PromptError>> ChatClient for FnClient<F> {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, messages: &[Message]) -> Result<String, PromptError> {
        (self.f)(messages)
    }
}
