use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{
    CallRecord, ChatMessage, ChatModel, ChatRequest, ExtractionSchema, FieldKind, FieldSpec, Gateway, GatewayError, Role,
};

/// The four assessment tasks run over every transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeTask {
    /// Final diagnoses, ICD-10 codes and differential.
    Clinical,
    /// Control-question coverage.
    History,
    /// Prescribed treatments.
    Treatment,
    /// Recommended investigations.
    Workup,
}

impl JudgeTask {
    pub const ALL: [JudgeTask; 4] = [JudgeTask::Clinical, JudgeTask::History, JudgeTask::Treatment, JudgeTask::Workup];

    pub fn name(self) -> &'static str {
        match self {
            JudgeTask::Clinical => "clinical",
            JudgeTask::History => "history",
            JudgeTask::Treatment => "treatment",
            JudgeTask::Workup => "workup",
        }
    }

    /// Gateway channel carrying this task's judge calls.
    pub fn channel(self) -> String {
        format!("judge:{}", self.name())
    }

    pub fn schema(self) -> ExtractionSchema {
        let text = || FieldKind::Text;
        let maybe_text = || FieldKind::nullable(FieldKind::Text);
        let list_of = |fields: Vec<FieldSpec>| FieldKind::list(FieldKind::object(fields));
        let (key, fields) = match self {
            JudgeTask::Clinical => {
                return ExtractionSchema::new(
                    "clinical_evaluation",
                    vec![
                        FieldSpec::required(
                            "diagnoses",
                            list_of(vec![
                                FieldSpec::required("text", text()),
                                FieldSpec::required("evidence", text()),
                                FieldSpec::optional("gold_match", maybe_text()),
                            ]),
                        ),
                        FieldSpec::required(
                            "icd10_codes",
                            list_of(vec![FieldSpec::required("code", text()), FieldSpec::required("evidence", text())]),
                        ),
                        FieldSpec::required(
                            "differential",
                            list_of(vec![
                                FieldSpec::required("text", text()),
                                FieldSpec::required("evidence", text()),
                                FieldSpec::optional("matches_expected", maybe_text()),
                            ]),
                        ),
                    ],
                )
            }
            JudgeTask::History => (
                "questions",
                vec![
                    FieldSpec::required("question", text()),
                    FieldSpec::required("asked", FieldKind::Bool),
                    FieldSpec::required("evidence", text()),
                ],
            ),
            JudgeTask::Treatment => (
                "treatments",
                vec![
                    FieldSpec::required("name", text()),
                    FieldSpec::required("evidence", text()),
                    FieldSpec::optional("matches", maybe_text()),
                    FieldSpec::optional("targets", maybe_text()),
                ],
            ),
            JudgeTask::Workup => (
                "investigations",
                vec![
                    FieldSpec::required("name", text()),
                    FieldSpec::required("evidence", text()),
                    FieldSpec::optional("matches", maybe_text()),
                ],
            ),
        };
        ExtractionSchema::new(&format!("{}_assessment", self.name()), vec![FieldSpec::required(key, list_of(fields))])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JudgeError {
    #[error("no judge configured")]
    Disabled,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("judge reply does not fit the task: {0}")]
    Malformed(String),
}

/// Schema-constrained extraction backend.
pub trait Judge {
    /// Whether calls are possible at all. Tasks fall back to deterministic
    /// matching when this is false.
    fn enabled(&self) -> bool {
        true
    }

    fn extract(&mut self, task: JudgeTask, messages: Vec<ChatMessage>, schema: &ExtractionSchema) -> Result<Value, JudgeError>;

    /// Raw calls made so far, for the audit archive.
    fn take_log(&mut self) -> Vec<CallRecord> {
        Vec::new()
    }

    fn describe(&self) -> String;
}

impl<J: Judge + ?Sized> Judge for &mut J {
    fn enabled(&self) -> bool {
        (**self).enabled()
    }
    fn extract(&mut self, task: JudgeTask, messages: Vec<ChatMessage>, schema: &ExtractionSchema) -> Result<Value, JudgeError> {
        (**self).extract(task, messages, schema)
    }
    fn take_log(&mut self) -> Vec<CallRecord> {
        (**self).take_log()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<J: Judge + ?Sized> Judge for alloc::boxed::Box<J> {
    fn enabled(&self) -> bool {
        (**self).enabled()
    }
    fn extract(&mut self, task: JudgeTask, messages: Vec<ChatMessage>, schema: &ExtractionSchema) -> Result<Value, JudgeError> {
        (**self).extract(task, messages, schema)
    }
    fn take_log(&mut self) -> Vec<CallRecord> {
        (**self).take_log()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Deterministic-only evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoJudge;

impl Judge for NoJudge {
    fn enabled(&self) -> bool {
        false
    }

    fn extract(&mut self, _: JudgeTask, _: Vec<ChatMessage>, _: &ExtractionSchema) -> Result<Value, JudgeError> {
        Err(JudgeError::Disabled)
    }

    fn describe(&self) -> String {
        String::from("none")
    }
}

/// Judge backed by a chat model through the retrying gateway.
pub struct ModelJudge<M> {
    gateway: Gateway<M>,
}

impl<M: ChatModel> ModelJudge<M> {
    pub fn new(gateway: Gateway<M>) -> Self {
        Self { gateway }
    }

    pub fn gateway(&self) -> &Gateway<M> {
        &self.gateway
    }
}

impl<M: ChatModel> Judge for ModelJudge<M> {
    fn extract(&mut self, task: JudgeTask, messages: Vec<ChatMessage>, schema: &ExtractionSchema) -> Result<Value, JudgeError> {
        let request = ChatRequest { channel: task.channel(), speaker: Role::Judge, messages };
        Ok(self.gateway.complete_structured(&request, schema)?.value)
    }

    fn take_log(&mut self) -> Vec<CallRecord> {
        self.gateway.take_log()
    }

    fn describe(&self) -> String {
        self.gateway.describe()
    }
}

const EVIDENCE_RULE: &str = "Every item must carry an \"evidence\" field that is an exact, verbatim quote from the \
text provided. Never paraphrase evidence. If an item has no supporting quote, leave it out.";

/// Builds the judge conversation: task instructions with the schema, then
/// the material to assess.
pub fn judge_messages(task: JudgeTask, instructions: &str, material: &str) -> Vec<ChatMessage> {
    let schema = task.schema();
    vec![
        ChatMessage::unchecked(
            Role::System,
            format!(
                "You are a clinical evaluation assistant. {instructions}\n{EVIDENCE_RULE}\n\
                 Reply with one JSON object matching this schema:\n{}",
                schema.describe()
            ),
        ),
        ChatMessage::unchecked(Role::System, material.to_string()),
    ]
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct ClinicalReply {
    #[serde(default)]
    pub diagnoses: Vec<JudgedDiagnosis>,
    #[serde(default)]
    pub icd10_codes: Vec<JudgedCode>,
    #[serde(default)]
    pub differential: Vec<JudgedDifferential>,
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct JudgedDiagnosis {
    pub text: String,
    pub evidence: String,
    #[serde(default)]
    pub gold_match: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct JudgedCode {
    pub code: String,
    pub evidence: String,
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct JudgedDifferential {
    pub text: String,
    pub evidence: String,
    #[serde(default)]
    pub matches_expected: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct HistoryReply {
    pub questions: Vec<JudgedQuestion>,
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct JudgedQuestion {
    pub question: String,
    pub asked: bool,
    pub evidence: String,
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct TreatmentReply {
    pub treatments: Vec<JudgedItem>,
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct WorkupReply {
    pub investigations: Vec<JudgedItem>,
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct JudgedItem {
    pub name: String,
    pub evidence: String,
    #[serde(default)]
    pub matches: Option<String>,
    #[serde(default)]
    pub targets: Option<String>,
}

pub(crate) fn decode<T: serde::de::DeserializeOwned>(value: Value) -> Result<T, JudgeError> {
    serde_json::from_value(value).map_err(|e| JudgeError::Malformed(e.to_string()))
}
