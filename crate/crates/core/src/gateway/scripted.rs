use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ChatModel, ChatRequest, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptedFailure {
    Timeout,
    Transport,
    Refusal,
}

/// One line of a replay script: the channel expected to ask, and either the
/// reply text or an injected failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayEntry {
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ScriptedFailure>,
}

impl ReplayEntry {
    pub fn reply(role: &str, reply: &str) -> Self {
        Self { role: role.into(), reply: Some(reply.into()), error: None }
    }

    pub fn failure(role: &str, error: ScriptedFailure) -> Self {
        Self { role: role.into(), reply: None, error: Some(error) }
    }
}

/// Deterministic provider answering from per-channel FIFO queues.
///
/// Entries are consumed in file order within each channel, so interleaving
/// between channels does not affect which reply a call receives.
#[derive(Debug, Clone, Default)]
pub struct ScriptedModel {
    queues: BTreeMap<String, VecDeque<ReplayEntry>>,
    /// Reply repeated once a channel's queue is exhausted.
    repeat_last: BTreeMap<String, String>,
    served: u64,
}

impl ScriptedModel {
    pub fn new<I: IntoIterator<Item = ReplayEntry>>(entries: I) -> Self {
        let mut queues: BTreeMap<String, VecDeque<ReplayEntry>> = BTreeMap::new();
        for entry in entries {
            queues.entry(entry.role.clone()).or_default().push_back(entry);
        }
        Self { queues, repeat_last: BTreeMap::new(), served: 0 }
    }

    /// Parses a replay file: a JSON array of entries, or one entry per line.
    pub fn parse(text: &str) -> Result<Vec<ReplayEntry>, serde_json::Error> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('[') {
            return serde_json::from_str(trimmed);
        }
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }

    /// Makes a channel answer `reply` forever once its script runs out.
    pub fn repeat_when_exhausted(mut self, channel: &str, reply: &str) -> Self {
        self.repeat_last.insert(channel.into(), reply.into());
        self
    }

    pub fn remaining(&self, channel: &str) -> usize {
        self.queues.get(channel).map_or(0, VecDeque::len)
    }

    pub fn served(&self) -> u64 {
        self.served
    }
}

impl ChatModel for ScriptedModel {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, ModelError> {
        self.served += 1;
        let next = self.queues.get_mut(&request.channel).and_then(VecDeque::pop_front);
        match next {
            Some(ReplayEntry { error: Some(failure), .. }) => Err(match failure {
                ScriptedFailure::Timeout => ModelError::Timeout,
                ScriptedFailure::Transport => ModelError::Transport(String::from("scripted transport failure")),
                ScriptedFailure::Refusal => ModelError::Refusal(String::from("scripted refusal")),
            }),
            Some(ReplayEntry { reply: Some(reply), .. }) => Ok(reply),
            Some(_) => Err(ModelError::Transport(String::from("replay entry has neither reply nor error"))),
            None => match self.repeat_last.get(&request.channel) {
                Some(reply) => Ok(reply.clone()),
                None => Err(ModelError::Transport(format!("replay script exhausted for channel {:?}", request.channel))),
            },
        }
    }

    fn describe(&self) -> String {
        String::from("scripted")
    }
}
