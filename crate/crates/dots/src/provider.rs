//! Chat-completion transports: an OpenAI-compatible HTTP client and replay
//! scripts shared across agents.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use dots_core::gateway::{ChatModel, ChatRequest, ModelError, ProviderConfig, ReplayEntry, Role, ScriptedModel};
use serde_json::{json, Value};

/// Fallback credential variable when a config names none.
pub const DEFAULT_CREDENTIAL_VAR: &str = "DOTS_PROVIDER_API_KEY";
/// Overrides every configured HTTP endpoint when set.
pub const PROVIDER_URL_VAR: &str = "DOTS_PROVIDER_URL";

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("cannot read replay script {path}: {source}")]
    Replay { path: PathBuf, source: std::io::Error },
    #[error("replay script {path} is malformed: {source}")]
    ReplayFormat { path: PathBuf, source: serde_json::Error },
    #[error("unsupported endpoint {0:?}")]
    Endpoint(String),
    #[error(transparent)]
    Config(#[from] dots_core::gateway::ConfigError),
}

/// Counting semaphore capping in-flight requests to one provider.
#[derive(Debug)]
pub struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    pub fn new(cap: usize) -> Arc<Self> {
        Arc::new(Self { slots: Mutex::new(cap.max(1)), freed: Condvar::new() })
    }

    pub fn acquire(self: &Arc<Self>) -> Permit {
        let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap_or_else(|e| e.into_inner());
        }
        *slots -= 1;
        Permit { limiter: Arc::clone(self) }
    }

    pub fn available(&self) -> usize {
        *self.slots.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct Permit {
    limiter: Arc<Limiter>,
}

impl Drop for Permit {
    fn drop(&mut self) {
        *self.limiter.slots.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.limiter.freed.notify_one();
    }
}

/// Client for `/chat/completions` style endpoints.
#[derive(Clone)]
pub struct HttpModel {
    agent: ureq::Agent,
    url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    limiter: Arc<Limiter>,
}

impl HttpModel {
    pub fn new(config: &ProviderConfig, limiter: Arc<Limiter>) -> Self {
        let base = std::env::var(PROVIDER_URL_VAR).unwrap_or_else(|_| config.endpoint.clone());
        let url = if base.trim_end_matches('/').ends_with("/chat/completions") {
            base
        } else {
            format!("{}/chat/completions", base.trim_end_matches('/'))
        };
        let var = config.credential.clone().unwrap_or_else(|| DEFAULT_CREDENTIAL_VAR.to_string());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url,
            model: config.model.clone(),
            temperature: config.temperature,
            api_key: std::env::var(var).ok().filter(|k| !k.is_empty()),
            limiter,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

/// Maps a request onto OpenAI chat roles: the speaking agent's own turns
/// become `assistant`, everything else `user`. A request carrying only
/// system messages sends the last one as the user turn.
pub fn wire_messages(request: &ChatRequest) -> Vec<Value> {
    let mut out: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                r if r == request.speaker => "assistant",
                _ => "user",
            };
            json!({"role": role, "content": m.text})
        })
        .collect();
    if request.messages.iter().all(|m| m.role == Role::System) {
        if let Some(last) = out.last_mut() {
            last["role"] = json!("user");
        }
    }
    out
}

fn classify_status(status: u16, body: &str) -> ModelError {
    match status {
        408 | 504 => ModelError::Timeout,
        400 if body.contains("content_filter") || body.contains("content_policy") => ModelError::Refusal(body.into()),
        401 | 403 => ModelError::Refusal(format!("HTTP {status}")),
        _ => ModelError::Transport(format!("HTTP {status}: {}", body.chars().take(200).collect::<String>())),
    }
}

impl ChatModel for HttpModel {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, ModelError> {
        let _permit = self.limiter.acquire();
        let body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": wire_messages(request),
        });
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => ModelError::Timeout,
            other => ModelError::Transport(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| ModelError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(classify_status(status, &text));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| ModelError::Transport(e.to_string()))?;
        let choice = &value["choices"][0];
        if choice["finish_reason"] == "content_filter" {
            return Err(ModelError::Refusal(String::from("content filter")));
        }
        choice["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ModelError::Transport(String::from("response has no message content")))
    }

    fn describe(&self) -> String {
        format!("{} @ {}", self.model, self.url)
    }
}

/// One scripted model behind a lock so several agents (doctor, judge, ...)
/// consume the same replay file.
#[derive(Clone, Default)]
pub struct SharedModel {
    inner: Arc<Mutex<ScriptedModel>>,
}

impl SharedModel {
    pub fn new(model: ScriptedModel) -> Self {
        Self { inner: Arc::new(Mutex::new(model)) }
    }

    pub fn remaining(&self, channel: &str) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).remaining(channel)
    }
}

impl ChatModel for SharedModel {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, ModelError> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).complete(request)
    }

    fn describe(&self) -> String {
        String::from("scripted")
    }
}

pub fn load_replay(path: &Path) -> Result<Vec<ReplayEntry>, ProviderError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProviderError::Replay { path: path.into(), source })?;
    ScriptedModel::parse(&text).map_err(|source| ProviderError::ReplayFormat { path: path.into(), source })
}

/// A model usable from worker threads.
pub type DynModel = Box<dyn ChatModel + Send>;

/// Where an agent's replies come from.
#[derive(Clone)]
pub enum ModelSource {
    Http { config: ProviderConfig, limiter: Arc<Limiter> },
    /// One script shared by every agent built from this source.
    Shared(SharedModel),
    /// A directory holding `<case-id>.jsonl` scripts; each case run gets a
    /// fresh copy of its own script.
    PerCase(PathBuf),
}

impl ModelSource {
    /// Interprets `endpoint`: `scripted:<file>`, `scripted:<dir>` or an
    /// HTTP(S) URL.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        if let Some(path) = config.endpoint.strip_prefix("scripted:") {
            let path = PathBuf::from(path);
            if path.is_dir() {
                return Ok(ModelSource::PerCase(path));
            }
            return Ok(ModelSource::Shared(SharedModel::new(ScriptedModel::new(load_replay(&path)?))));
        }
        if config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://") {
            return Ok(ModelSource::Http { config: config.clone(), limiter: Limiter::new(config.concurrency) });
        }
        Err(ProviderError::Endpoint(config.endpoint.clone()))
    }

    pub fn model_for(&self, case_id: &str) -> Result<DynModel, ProviderError> {
        Ok(match self {
            ModelSource::Http { config, limiter } => Box::new(HttpModel::new(config, Arc::clone(limiter))),
            ModelSource::Shared(m) => Box::new(m.clone()),
            ModelSource::PerCase(dir) => {
                Box::new(ScriptedModel::new(load_replay(&dir.join(format!("{case_id}.jsonl")))?))
            }
        })
    }
}
