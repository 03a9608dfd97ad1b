//! Chat-completion providers.
//!
//! The HTTP client speaks the common chat-completions shape
//! (`{model, temperature, n, messages}` -> `{choices: [{content}]}`); the
//! scripted provider answers from a rule file and is used for offline,
//! replayable runs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LLM_API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("LLM unavailable after {attempts} attempts: {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("invalid LLM configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    /// Number of samples requested.
    pub n: usize,
}

impl ChatRequest {
    pub fn new(system: &str, user: String, n: usize) -> Self {
        Self {
            messages: vec![ChatMessage::system(system), ChatMessage::user(user)],
            n: n.max(1),
        }
    }

    /// All message contents joined by newlines.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A source of sampled completions. Implementations return at most `request.n` texts.
pub trait LlmProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LlmKind {
    #[default]
    Remote,
    Scripted,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_max_output_tokens() -> u32 {
    1024
}
fn default_num_return() -> usize {
    10
}
fn default_timeout_ms() -> u64 {
    120_000
}
fn default_max_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmProviderConfig {
    #[serde(default)]
    pub kind: LlmKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    /// Most samples asked of the endpoint in one HTTP call; larger requests
    /// are split into several calls.
    #[serde(default = "default_num_return")]
    pub num_return: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Rule file for the scripted provider.
    #[serde(default)]
    pub transcript_path: Option<PathBuf>,
}

impl Default for LlmProviderConfig {
    fn default() -> Self {
        Self {
            kind: LlmKind::Remote,
            endpoint_url: None,
            model_id: String::new(),
            temperature: default_temperature(),
            max_output_tokens: default_max_output_tokens(),
            num_return: default_num_return(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            transcript_path: None,
        }
    }
}

impl LlmProviderConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        if self.num_return == 0 {
            return Err(LlmError::Config("num_return must be >= 1".into()));
        }
        match self.kind {
            LlmKind::Remote if self.endpoint_url.is_none() => {
                Err(LlmError::Config("remote LLM requires endpoint_url".into()))
            }
            LlmKind::Scripted if self.transcript_path.is_none() => {
                Err(LlmError::Config("scripted LLM requires transcript_path".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Construct the configured provider.
pub fn build_llm(config: &LlmProviderConfig) -> Result<Box<dyn LlmProvider>, LlmError> {
    config.validate()?;
    match config.kind {
        LlmKind::Remote => Ok(Box::new(HttpChatProvider::from_config(config)?)),
        LlmKind::Scripted => {
            let path = config.transcript_path.as_deref().expect("validated");
            Ok(Box::new(ScriptedLlm::from_file(path)?))
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    n: usize,
    max_tokens: u32,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct WireChoice {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    message: Option<WireMessage>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

pub struct HttpChatProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    max_retries: u32,
    num_return: usize,
    api_key: Option<String>,
}

impl HttpChatProvider {
    pub fn from_config(config: &LlmProviderConfig) -> Result<Self, LlmError> {
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| LlmError::Config("remote LLM requires endpoint_url".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            model: config.model_id.clone(),
            temperature: config.temperature,
            max_tokens: config.max_output_tokens,
            max_retries: config.max_retries,
            num_return: config.num_return.max(1),
            api_key: std::env::var(LLM_API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

impl HttpChatProvider {
    fn post_with_retries(&self, messages: &[ChatMessage], n: usize) -> Result<Vec<String>, LlmError> {
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(100 * (1 << attempt.min(5))));
            }
            let mut req = self.client.post(&self.endpoint).json(&WireRequest {
                model: &self.model,
                temperature: self.temperature,
                n,
                max_tokens: self.max_tokens,
                messages,
            });
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send().and_then(|r| r.error_for_status()) {
                Ok(resp) => match resp.json::<WireResponse>() {
                    Ok(body) => {
                        let mut texts: Vec<String> = body
                            .choices
                            .into_iter()
                            .filter_map(|c| c.content.or(c.message.map(|m| m.content)))
                            .collect();
                        texts.truncate(n);
                        return Ok(texts);
                    }
                    Err(e) => last = format!("malformed response: {e}"),
                },
                Err(e) => last = e.to_string(),
            }
            log::warn!("LLM request attempt {} failed: {last}", attempt + 1);
        }
        Err(LlmError::Unavailable {
            attempts,
            reason: last,
        })
    }
}

impl LlmProvider for HttpChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError> {
        let mut out = Vec::with_capacity(request.n);
        let mut remaining = request.n;
        while remaining > 0 {
            let n = remaining.min(self.num_return);
            out.extend(self.post_with_retries(&request.messages, n)?);
            remaining -= n;
        }
        Ok(out)
    }
}

/// One rule of a scripted transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    /// Every string must occur in the request text.
    #[serde(default)]
    pub contains: Vec<String>,
    /// None of these may occur in the request text.
    #[serde(default)]
    pub absent: Vec<String>,
    /// Responses handed out in order, cycling.
    #[serde(default)]
    pub responses: Vec<String>,
    /// Simulate an unreachable provider for matching requests.
    #[serde(default)]
    pub fail: bool,
}

impl ScriptRule {
    fn matches(&self, text: &str) -> bool {
        self.contains.iter().all(|s| text.contains(s.as_str()))
            && !self.absent.iter().any(|s| text.contains(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Transcript {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    /// Used when no rule matches; an empty default answers with no samples.
    #[serde(default)]
    pub default: Option<ScriptRule>,
}

/// Deterministic provider answering from a [`Transcript`].
pub struct ScriptedLlm {
    transcript: Transcript,
    cursors: Mutex<Vec<usize>>,
    calls: AtomicUsize,
}

impl ScriptedLlm {
    pub fn new(transcript: Transcript) -> Self {
        let n = transcript.rules.len() + 1;
        Self {
            transcript,
            cursors: Mutex::new(vec![0; n]),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let transcript: Transcript = toml::from_str(&text)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(transcript))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmProvider for ScriptedLlm {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = request.full_text();
        let (slot, rule) = match self
            .transcript
            .rules
            .iter()
            .enumerate()
            .find(|(_, r)| r.matches(&text))
        {
            Some((i, r)) => (i, Some(r)),
            None => (self.transcript.rules.len(), self.transcript.default.as_ref()),
        };
        let Some(rule) = rule else {
            return Ok(Vec::new());
        };
        if rule.fail {
            return Err(LlmError::Unavailable {
                attempts: 1,
                reason: "scripted failure".into(),
            });
        }
        if rule.responses.is_empty() {
            return Ok(Vec::new());
        }
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let start = cursors[slot];
        cursors[slot] = start + request.n;
        Ok((start..start + request.n)
            .map(|i| rule.responses[i % rule.responses.len()].clone())
            .collect())
    }
}
