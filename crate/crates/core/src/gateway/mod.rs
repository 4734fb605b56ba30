//! Uniform chat-completion access: message types, provider configuration,
//! retrying gateway with a per-session call log, and a scripted provider for
//! offline runs.

mod schema;
mod scripted;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::{Clock, EpochMillis};

pub use schema::{ExtractionSchema, FieldKind, FieldSpec, SchemaError};
pub use scripted::{ReplayEntry, ScriptedFailure, ScriptedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Doctor,
    Patient,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("message text is empty and carries no attachments")]
pub struct EmptyMessage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<String>,
}

impl ChatMessage {
    pub fn new(role: Role, text: impl Into<String>) -> Result<Self, EmptyMessage> {
        Self::with_attachments(role, text, Vec::new())
    }

    pub fn with_attachments(role: Role, text: impl Into<String>, attachments: Vec<String>) -> Result<Self, EmptyMessage> {
        let text = text.into();
        if text.trim().is_empty() && attachments.is_empty() {
            return Err(EmptyMessage);
        }
        Ok(Self { role, text, attachments })
    }

    pub(crate) fn unchecked(role: Role, text: impl Into<String>) -> Self {
        Self { role, text: text.into(), attachments: Vec::new() }
    }
}

/// Default number of re-prompts after a schema violation.
pub const DEFAULT_SCHEMA_RETRIES: u32 = 3;

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    2
}
fn default_schema_retries() -> u32 {
    DEFAULT_SCHEMA_RETRIES
}
fn default_concurrency() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Endpoint locator: an HTTP URL, or `scripted:<path>` for replay files.
    pub endpoint: String,
    /// Name of the environment variable holding the credential. The secret
    /// itself never appears in configs or logs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_schema_retries")]
    pub schema_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("timeout must be positive")]
    Timeout,
    #[error("concurrency cap must be at least 1")]
    Concurrency,
}

impl ProviderConfig {
    pub fn new(endpoint: &str, model: &str) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            credential: None,
            model: model.to_string(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            schema_retries: default_schema_retries(),
            temperature: 0.0,
            concurrency: default_concurrency(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.timeout_secs > 0.0) {
            return Err(ConfigError::Timeout);
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Concurrency);
        }
        Ok(())
    }
}

/// One outbound request. `channel` routes replies (e.g. `doctor`,
/// `patient`, `judge:history`); `speaker` is the role the model plays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub channel: String,
    pub speaker: Role,
    pub messages: Vec<ChatMessage>,
}

/// Failure of a single transport attempt.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider refused: {0}")]
    Refusal(String),
}

/// A single-attempt chat-completion transport.
pub trait ChatModel {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, ModelError>;

    /// Provider metadata recorded in transcripts.
    fn describe(&self) -> String {
        String::from("unknown")
    }
}

impl<M: ChatModel + ?Sized> ChatModel for alloc::boxed::Box<M> {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, ModelError> {
        (**self).complete(request)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("chat history is empty")]
    EmptyHistory,
    #[error("timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider refused: {0}")]
    Refusal(String),
    #[error("schema violation after {attempts} attempt(s): {error}")]
    SchemaViolation { attempts: u32, error: SchemaError },
    #[error("schema has no required field")]
    UnusableSchema,
}

/// One transport attempt as seen by the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub seq: u64,
    pub channel: String,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub credential: Option<String>,
    pub attempt: u32,
    pub started_at: EpochMillis,
    pub latency_ms: i64,
    pub request: Vec<ChatMessage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Result of a schema-constrained completion.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredReply {
    pub value: Value,
    /// Number of re-prompts needed before the reply conformed.
    pub retries: u32,
}

/// Retrying front-end over a [`ChatModel`], recording every attempt.
pub struct Gateway<M> {
    model: M,
    config: ProviderConfig,
    clock: Arc<dyn Clock + Send + Sync>,
    log: Vec<CallRecord>,
    next_seq: u64,
}

impl<M: ChatModel> Gateway<M> {
    pub fn new(model: M, config: ProviderConfig, clock: Arc<dyn Clock + Send + Sync>) -> Self {
        Self { model, config, clock, log: Vec::new(), next_seq: 0 }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut M {
        &mut self.model
    }

    pub fn describe(&self) -> String {
        format!("{} ({})", self.config.model, self.model.describe())
    }

    pub fn log(&self) -> &[CallRecord] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<CallRecord> {
        core::mem::take(&mut self.log)
    }

    /// Sends the request, retrying timeouts and transport failures up to
    /// `max_retries` times. Refusals are not retried.
    pub fn complete_chat(&mut self, request: &ChatRequest) -> Result<ChatMessage, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::EmptyHistory);
        }
        let attempts_allowed = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = self.clock.now_ms();
            let outcome = self.model.complete(request);
            let latency = self.clock.now_ms() - started;
            self.log.push(CallRecord {
                seq: self.next_seq,
                channel: request.channel.clone(),
                model: self.config.model.clone(),
                credential: self.config.credential.clone(),
                attempt,
                started_at: started,
                latency_ms: latency,
                request: request.messages.clone(),
                response: outcome.as_ref().ok().cloned(),
                error: outcome.as_ref().err().map(|e| e.to_string()),
            });
            self.next_seq += 1;
            match outcome {
                Ok(text) => return Ok(ChatMessage::unchecked(request.speaker, text)),
                Err(ModelError::Refusal(reason)) => return Err(GatewayError::Refusal(reason)),
                Err(ModelError::Timeout) if attempt >= attempts_allowed => {
                    return Err(GatewayError::Timeout { attempts: attempt })
                }
                Err(ModelError::Transport(message)) if attempt >= attempts_allowed => {
                    return Err(GatewayError::Transport { attempts: attempt, message })
                }
                Err(_) => continue,
            }
        }
    }

    /// Requests a reply conforming to `schema`. On a violation the model is
    /// re-prompted with the validation error, up to `schema_retries` times.
    pub fn complete_structured(
        &mut self,
        request: &ChatRequest,
        schema: &ExtractionSchema,
    ) -> Result<StructuredReply, GatewayError> {
        if !schema.is_usable() {
            return Err(GatewayError::UnusableSchema);
        }
        let mut request = request.clone();
        let attempts_allowed = self.config.schema_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let reply = self.complete_chat(&request)?;
            match schema.parse(&reply.text) {
                Ok(value) => return Ok(StructuredReply { value, retries: attempt - 1 }),
                Err(error) if attempt >= attempts_allowed => {
                    return Err(GatewayError::SchemaViolation { attempts: attempt, error })
                }
                Err(error) => {
                    request.messages.push(reply);
                    request.messages.push(ChatMessage::unchecked(
                        Role::System,
                        format!(
                            "Your previous reply did not match the required schema `{}`: {error}. \
                             Reply again with a single JSON object only.",
                            schema.name
                        ),
                    ));
                }
            }
        }
    }
}
