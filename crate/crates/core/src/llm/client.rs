//! Chat-completion clients: fixture replay, recording, and HTTP.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Result, XpError};

pub const ENV_URL: &str = "XP_LLM_URL";
pub const ENV_KEY: &str = "XP_LLM_KEY";
pub const ENV_MODEL: &str = "XP_LLM_MODEL";

pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str, temperature: f64, seed: u64) -> Result<String>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, prompt: &str, temperature: f64, seed: u64) -> Result<String> {
        (**self).complete(prompt, temperature, seed)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, prompt: &str, temperature: f64, seed: u64) -> Result<String> {
        (**self).complete(prompt, temperature, seed)
    }
}

/// Lowercase hex SHA-256 of the prompt bytes; fixture file stem.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Replays `<dir>/<sha256-of-prompt>.txt`. Ignores temperature and seed.
#[derive(Debug, Clone)]
pub struct FixtureChatClient {
    dir: PathBuf,
}

impl FixtureChatClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureChatClient { dir: dir.into() }
    }

    pub fn path_for(&self, prompt: &str) -> PathBuf {
        self.dir.join(format!("{}.txt", prompt_hash(prompt)))
    }
}

impl ChatClient for FixtureChatClient {
    fn complete(&self, prompt: &str, _temperature: f64, _seed: u64) -> Result<String> {
        let path = self.path_for(prompt);
        fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => XpError::MissingFixture(prompt_hash(prompt)),
            _ => XpError::Io(e),
        })
    }
}

/// Forwards to an inner client and stores every reply as a fixture file.
pub struct RecordingChatClient<C> {
    inner: C,
    dir: PathBuf,
}

impl<C: ChatClient> RecordingChatClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(RecordingChatClient { inner, dir })
    }
}

impl<C: ChatClient> ChatClient for RecordingChatClient<C> {
    fn complete(&self, prompt: &str, temperature: f64, seed: u64) -> Result<String> {
        let reply = self.inner.complete(prompt, temperature, seed)?;
        let path = self.dir.join(format!("{}.txt", prompt_hash(prompt)));
        // first recorded reply wins so retries cannot change a fixture
        if !path.exists() {
            fs::write(path, &reply)?;
        }
        Ok(reply)
    }
}

/// Wraps a client and counts calls.
pub struct CountingChatClient<C> {
    inner: C,
    calls: AtomicUsize,
}

impl<C> CountingChatClient<C> {
    pub fn new(inner: C) -> Self {
        CountingChatClient {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<C: ChatClient> ChatClient for CountingChatClient<C> {
    fn complete(&self, prompt: &str, temperature: f64, seed: u64) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt, temperature, seed)
    }
}

/// Chat-completion over HTTP: POST `{model, messages, temperature, seed}`,
/// read `choices[0].message.content`.
pub struct HttpChatClient {
    url: String,
    key: Option<String>,
    model: String,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(url: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| XpError::LlmTransport(e.to_string()))?;
        Ok(HttpChatClient {
            url: url.into(),
            key,
            model: model.into(),
            http,
        })
    }

    /// Configure from `XP_LLM_URL`, `XP_LLM_KEY` and optional `XP_LLM_MODEL`.
    pub fn from_env() -> Result<Self> {
        let url = std::env::var(ENV_URL)
            .map_err(|_| XpError::ConfigInvalid(format!("{ENV_URL} is not set")))?;
        let key = std::env::var(ENV_KEY).ok();
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".to_string());
        Self::new(url, key, model)
    }

    pub fn request_body(&self, prompt: &str, temperature: f64, seed: u64) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "seed": seed,
        })
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str, temperature: f64, seed: u64) -> Result<String> {
        let mut req = self.http.post(&self.url).json(&self.request_body(prompt, temperature, seed));
        if let Some(key) = &self.key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| XpError::LlmTransport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(XpError::LlmTransport(format!("HTTP {status}: {body}")));
        }
        let body: Value = resp.json().map_err(|e| XpError::LlmTransport(e.to_string()))?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| XpError::LlmTransport("response lacks choices[0].message.content".into()))
    }
}

/// Write a reply for `prompt` into a fixture directory.
pub fn write_fixture(dir: &Path, prompt: &str, reply: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.txt", prompt_hash(prompt)));
    fs::write(&path, reply)?;
    Ok(path)
}
