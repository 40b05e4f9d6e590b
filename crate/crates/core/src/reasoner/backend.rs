use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{PromptKind, PromptRequest};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Connection, timeout or HTTP-level failure.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    /// The backend answered but not with generated text.
    #[error("unexpected backend reply: {0}")]
    Malformed(String),
}

impl BackendError {
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Unavailable(_))
    }
}

/// A text-completion service. Shared across concurrent pipeline runs.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError>;

    /// Called when a reply was rejected, so caches can forget it.
    fn discard(&self, _request: &PromptRequest) {}
}

pub fn prompt_sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL of an OpenAI-compatible API, or the full chat-completions URL.
    pub url: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl HttpConfig {
    /// Reads `TRACE_LLM_URL` and `TRACE_LLM_KEY`. None when the URL is unset.
    pub fn from_env(model: &str) -> Option<Self> {
        let url = std::env::var("TRACE_LLM_URL").ok().filter(|u| !u.trim().is_empty())?;
        Some(Self {
            url,
            api_key: std::env::var("TRACE_LLM_KEY").ok().filter(|k| !k.is_empty()),
            model: model.to_string(),
            timeout_secs: default_timeout(),
        })
    }

    pub fn endpoint(&self) -> String {
        let base = self.url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Chat-completion client: one user message per prompt.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": request.text }],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut call = self.client.post(self.config.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Unavailable(format!("HTTP {status}: {}", text.trim())));
        }
        let reply: Value = resp.json().map_err(|e| BackendError::Malformed(e.to_string()))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("no choices[0].message.content".into()))
    }
}

/// File cache in front of another backend, keyed by prompt hash.
pub struct CachingBackend {
    inner: Arc<dyn Backend>,
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl CachingBackend {
    pub fn new(inner: Arc<dyn Backend>, dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            inner,
            dir,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    fn path(&self, request: &PromptRequest) -> PathBuf {
        self.dir.join(format!("{}.txt", prompt_sha256(&request.text)))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    /// Calls forwarded to the inner backend.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

impl Backend for CachingBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        let path = self.path(request);
        if let Ok(text) = fs::read_to_string(&path) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(text);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let text = self.inner.complete(request)?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let written = fs::write(&tmp, &text).and_then(|_| fs::rename(&tmp, &path));
        if let Err(e) = written {
            log::warn!("cache write {} failed: {e}", path.display());
        }
        Ok(text)
    }

    fn discard(&self, request: &PromptRequest) {
        let _ = fs::remove_file(self.path(request));
        self.inner.discard(request);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRecord {
    pub trace_id: String,
    pub kind: PromptKind,
    pub prompt_sha256: String,
    pub response: Option<String>,
    pub attempts: usize,
    pub latency_ms: u64,
}

/// Append-only JSON-lines log of backend calls.
pub struct RunLog {
    file: Mutex<File>,
}

impl RunLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    pub fn append(&self, record: &RunLogRecord) -> std::io::Result<()> {
        let mut line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(line.as_bytes())
    }
}
