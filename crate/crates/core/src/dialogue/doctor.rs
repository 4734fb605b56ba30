use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::gateway::{ChatMessage, ChatModel, ChatRequest, Gateway, Role};

pub const DOCTOR_CHANNEL: &str = "doctor";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DoctorError {
    #[error("doctor endpoint unreachable: {0}")]
    Unreachable(String),
}

/// The system under test: reads the dialogue so far and produces the next
/// doctor message (a question or the final recommendation block).
pub trait Doctor {
    fn next_message(&mut self, history: &[ChatMessage]) -> Result<String, DoctorError>;

    fn describe(&self) -> String;
}

impl<D: Doctor + ?Sized> Doctor for &mut D {
    fn next_message(&mut self, history: &[ChatMessage]) -> Result<String, DoctorError> {
        (**self).next_message(history)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<D: Doctor + ?Sized> Doctor for Box<D> {
    fn next_message(&mut self, history: &[ChatMessage]) -> Result<String, DoctorError> {
        (**self).next_message(history)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Instructions sent to model-backed doctors.
pub const DOCTOR_SYSTEM_PROMPT: &str = "You are a physician consulting a patient by chat. Ask one question per \
message. When you are ready, reply with a single JSON object with \"final_recommendations\": true and the \
fields diagnoses, icd10, differential, investigations and treatments (lists of strings).";

/// A doctor backed by a chat model on the `doctor` channel.
pub struct ModelDoctor<M> {
    gateway: Gateway<M>,
    system_prompt: Option<String>,
}

impl<M: ChatModel> ModelDoctor<M> {
    pub fn new(gateway: Gateway<M>) -> Self {
        Self { gateway, system_prompt: Some(DOCTOR_SYSTEM_PROMPT.to_string()) }
    }

    /// Sends the dialogue without any harness-authored system message.
    pub fn without_system_prompt(mut self) -> Self {
        self.system_prompt = None;
        self
    }

    pub fn gateway(&self) -> &Gateway<M> {
        &self.gateway
    }

    pub fn gateway_mut(&mut self) -> &mut Gateway<M> {
        &mut self.gateway
    }
}

impl<M: ChatModel> Doctor for ModelDoctor<M> {
    fn next_message(&mut self, history: &[ChatMessage]) -> Result<String, DoctorError> {
        let mut messages = Vec::with_capacity(history.len() + 1);
        if let Some(prompt) = &self.system_prompt {
            messages.push(ChatMessage::unchecked(Role::System, prompt.clone()));
        }
        messages.extend(history.iter().cloned());
        let request = ChatRequest { channel: DOCTOR_CHANNEL.into(), speaker: Role::Doctor, messages };
        self.gateway
            .complete_chat(&request)
            .map(|m| m.text)
            .map_err(|e| DoctorError::Unreachable(e.to_string()))
    }

    fn describe(&self) -> String {
        format!("model-doctor:{}", self.gateway.describe())
    }
}

/// A doctor driven by a closure, handy for tests and adapters.
pub struct FnDoctor<F> {
    name: String,
    f: F,
}

impl<F> FnDoctor<F>
where
    F: FnMut(&[ChatMessage]) -> Result<String, DoctorError>,
{
    pub fn new(name: &str, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> Doctor for FnDoctor<F>
where
    F: FnMut(&[ChatMessage]) -> Result<String, DoctorError>,
{
    fn next_message(&mut self, history: &[ChatMessage]) -> Result<String, DoctorError> {
        (self.f)(history)
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}
