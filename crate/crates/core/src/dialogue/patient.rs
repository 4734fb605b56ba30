use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::case::{ArchetypeStyle, CaseRecord, Fact};
use crate::gateway::{ChatMessage, ChatModel, ChatRequest, Gateway, GatewayError, Role};
use crate::text::contains_phrase;

pub const PATIENT_CHANNEL: &str = "patient";

/// Replies used when the case holds no fact for the question.
pub const UNCERTAINTY_TEMPLATES: [&str; 3] = [
    "I'm not sure.",
    "No, I don't think so.",
    "I don't know, nobody has told me anything about that.",
];

/// Clarifying question used by the questioner archetype when the case does
/// not supply one.
pub const CLARIFY_TEMPLATE: &str = "Could you explain what that means?";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatientError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("patient agent failed: {0}")]
    Provider(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientReply {
    pub text: String,
}

pub trait Patient {
    /// Resets per-run state before a new consultation.
    fn begin(&mut self, case: &CaseRecord, seed: u64);

    fn reply(&mut self, case: &CaseRecord, history: &[ChatMessage], question: &str) -> Result<PatientReply, PatientError>;

    /// Message sent once after the doctor finalizes (returner archetype).
    fn follow_up(&mut self, case: &CaseRecord) -> Option<String> {
        match case.patient_archetype.style {
            ArchetypeStyle::Returner => case.patient_archetype.statement.clone(),
            _ => None,
        }
    }

    fn describe(&self) -> String;
}

impl<P: Patient + ?Sized> Patient for &mut P {
    fn begin(&mut self, case: &CaseRecord, seed: u64) {
        (**self).begin(case, seed)
    }
    fn reply(&mut self, case: &CaseRecord, history: &[ChatMessage], question: &str) -> Result<PatientReply, PatientError> {
        (**self).reply(case, history, question)
    }
    fn follow_up(&mut self, case: &CaseRecord) -> Option<String> {
        (**self).follow_up(case)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<P: Patient + ?Sized> Patient for alloc::boxed::Box<P> {
    fn begin(&mut self, case: &CaseRecord, seed: u64) {
        (**self).begin(case, seed)
    }
    fn reply(&mut self, case: &CaseRecord, history: &[ChatMessage], question: &str) -> Result<PatientReply, PatientError> {
        (**self).reply(case, history, question)
    }
    fn follow_up(&mut self, case: &CaseRecord) -> Option<String> {
        (**self).follow_up(case)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

fn fact_matches(fact: &Fact, question: &str) -> bool {
    contains_phrase(question, &fact.topic) || fact.keywords.iter().any(|k| contains_phrase(question, k))
}

fn mentions_any(question: &str, triggers: &[String]) -> bool {
    triggers.iter().any(|t| contains_phrase(question, t))
}

/// Table-lookup patient: answers with verbatim fact-bank text only.
#[derive(Debug, Clone)]
pub struct MockPatient {
    rng: ChaCha8Rng,
    revealed: BTreeSet<usize>,
    replies: u32,
}

impl MockPatient {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), revealed: BTreeSet::new(), replies: 0 }
    }

    fn uncertain(&mut self) -> &'static str {
        UNCERTAINTY_TEMPLATES[self.rng.random_range(0..UNCERTAINTY_TEMPLATES.len())]
    }
}

impl Default for MockPatient {
    fn default() -> Self {
        Self::new(0)
    }
}

impl Patient for MockPatient {
    fn begin(&mut self, _case: &CaseRecord, seed: u64) {
        *self = Self::new(seed);
    }

    fn reply(&mut self, case: &CaseRecord, _history: &[ChatMessage], question: &str) -> Result<PatientReply, PatientError> {
        if question.trim().is_empty() {
            return Err(PatientError::EmptyQuestion);
        }
        let archetype = &case.patient_archetype;
        let statement = archetype.statement.as_deref();
        let first_reply = self.replies == 0;
        self.replies += 1;

        if archetype.style == ArchetypeStyle::Denier && mentions_any(question, &archetype.triggers) {
            if let Some(denial) = statement {
                return Ok(PatientReply { text: denial.to_string() });
            }
        }

        let matched: Vec<usize> = case
            .fact_bank
            .iter()
            .enumerate()
            .filter(|(_, f)| fact_matches(f, question))
            .map(|(i, _)| i)
            .collect();
        let mut parts: Vec<&str> = Vec::new();
        if archetype.style == ArchetypeStyle::Insistent {
            parts.extend(statement);
        }
        if matched.is_empty() {
            let t = self.uncertain();
            parts.push(t);
        } else {
            for &i in &matched {
                self.revealed.insert(i);
                parts.push(&case.fact_bank[i].answer);
            }
        }
        match archetype.style {
            ArchetypeStyle::OverSharer => {
                if let Some((i, fact)) = case.fact_bank.iter().enumerate().find(|(i, _)| !self.revealed.contains(i)) {
                    self.revealed.insert(i);
                    parts.push(&fact.answer);
                }
            }
            ArchetypeStyle::Questioner => {
                let ask = if archetype.triggers.is_empty() { first_reply } else { mentions_any(question, &archetype.triggers) };
                if ask {
                    parts.push(statement.unwrap_or(CLARIFY_TEMPLATE));
                }
            }
            _ => {}
        }
        Ok(PatientReply { text: parts.join(" ") })
    }

    fn describe(&self) -> String {
        String::from("mock-patient")
    }
}

/// Patient played by a chat model conditioned on the case record.
pub struct LlmPatient<M> {
    gateway: Gateway<M>,
}

impl<M: ChatModel> LlmPatient<M> {
    pub fn new(gateway: Gateway<M>) -> Self {
        Self { gateway }
    }

    pub fn gateway(&self) -> &Gateway<M> {
        &self.gateway
    }

    pub fn system_prompt(case: &CaseRecord) -> String {
        let mut prompt = String::from(
            "You are a patient talking to a doctor. Answer only the question asked, briefly, in plain language. \
             Do not volunteer clinically relevant details unless they are specifically asked about. \
             Use only the facts listed below; you may paraphrase them but never add symptoms, exposures, \
             diagnoses or test results. If asked about something not listed, say you are not sure or answer no.\n\n",
        );
        prompt.push_str(&format!("Opening complaint: {}\n\nFacts:\n", case.intro));
        for fact in &case.fact_bank {
            prompt.push_str(&format!("- {}: {}\n", fact.topic, fact.answer));
        }
        let archetype = &case.patient_archetype;
        let statement = archetype.statement.as_deref().unwrap_or("");
        let style = match archetype.style {
            ArchetypeStyle::Neutral => String::new(),
            ArchetypeStyle::OverSharer => String::from("You tend to share more listed facts than were asked for."),
            ArchetypeStyle::Insistent => format!("You keep insisting: \"{statement}\""),
            ArchetypeStyle::Denier => format!("When asked about {:?}, you deny it: \"{statement}\"", archetype.triggers),
            ArchetypeStyle::Questioner => String::from("You ask the doctor to explain medical terms you do not understand."),
            ArchetypeStyle::Returner => String::new(),
        };
        if !style.is_empty() {
            prompt.push_str("\nBehavior: ");
            prompt.push_str(&style);
            prompt.push('\n');
        }
        prompt
    }
}

impl<M: ChatModel> Patient for LlmPatient<M> {
    fn begin(&mut self, _case: &CaseRecord, _seed: u64) {}

    fn reply(&mut self, case: &CaseRecord, history: &[ChatMessage], question: &str) -> Result<PatientReply, PatientError> {
        if question.trim().is_empty() {
            return Err(PatientError::EmptyQuestion);
        }
        let mut messages = alloc::vec![ChatMessage::unchecked(Role::System, Self::system_prompt(case))];
        messages.extend(history.iter().cloned());
        if history.last().is_none_or(|m| m.text != question) {
            messages.push(ChatMessage::unchecked(Role::Doctor, question));
        }
        let request = ChatRequest { channel: PATIENT_CHANNEL.into(), speaker: Role::Patient, messages };
        self.gateway
            .complete_chat(&request)
            .map(|m| PatientReply { text: m.text })
            .map_err(|e: GatewayError| PatientError::Provider(e.to_string()))
    }

    fn describe(&self) -> String {
        format!("llm-patient:{}", self.gateway.describe())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::PatientArchetype;
    use crate::testutil::sample_case;
    use alloc::vec;

    fn reply(case: &CaseRecord, q: &str) -> String {
        let mut p = MockPatient::new(1);
        p.begin(case, 1);
        p.reply(case, &[], q).unwrap().text
    }

    #[test]
    fn topic_lookup_returns_fact() {
        let case = sample_case();
        let allergy = case.fact_bank.iter().find(|f| f.topic == "allergies").unwrap();
        assert_eq!(reply(&case, "Do you have any allergies?"), allergy.answer);
    }

    #[test]
    fn unknown_topic_yields_uncertainty() {
        let case = sample_case();
        let text = reply(&case, "Have you travelled to Peru recently?");
        assert!(UNCERTAINTY_TEMPLATES.contains(&text.as_str()), "{text}");
    }

    #[test]
    fn denier_uses_case_phrasing() {
        let mut case = sample_case();
        case.patient_archetype = PatientArchetype {
            style: ArchetypeStyle::Denier,
            statement: Some("There is no way I'm pregnant.".into()),
            triggers: vec!["pregnant".into(), "pregnancy".into()],
        };
        let before = case.fact_bank.clone();
        assert_eq!(reply(&case, "Could you be pregnant?"), "There is no way I'm pregnant.");
        assert_eq!(case.fact_bank, before);
    }

    #[test]
    fn insistent_prepends_claim() {
        let mut case = sample_case();
        case.patient_archetype = PatientArchetype {
            style: ArchetypeStyle::Insistent,
            statement: Some("I'm sure it's my kidneys.".into()),
            triggers: vec![],
        };
        assert!(reply(&case, "Any fever?").starts_with("I'm sure it's my kidneys. "));
    }

    #[test]
    fn over_sharer_adds_one_unasked_fact() {
        let mut case = sample_case();
        case.patient_archetype.style = ArchetypeStyle::OverSharer;
        let text = reply(&case, "Do you have any allergies?");
        let allergy = &case.fact_bank.iter().find(|f| f.topic == "allergies").unwrap().answer;
        assert!(text.starts_with(allergy.as_str()));
        assert!(text.len() > allergy.len());
    }

    #[test]
    fn questioner_asks_on_first_reply() {
        let mut case = sample_case();
        case.patient_archetype.style = ArchetypeStyle::Questioner;
        let mut p = MockPatient::new(0);
        let first = p.reply(&case, &[], "Any fever?").unwrap().text;
        let second = p.reply(&case, &[], "Any fever?").unwrap().text;
        assert!(first.ends_with(CLARIFY_TEMPLATE));
        assert!(!second.ends_with(CLARIFY_TEMPLATE));
    }

    #[test]
    fn returner_follow_up_and_empty_question() {
        let mut case = sample_case();
        case.patient_archetype =
            PatientArchetype { style: ArchetypeStyle::Returner, statement: Some("I forgot: I'm on warfarin.".into()), triggers: vec![] };
        let mut p = MockPatient::new(0);
        assert_eq!(p.follow_up(&case).as_deref(), Some("I forgot: I'm on warfarin."));
        assert_eq!(p.reply(&case, &[], "  "), Err(PatientError::EmptyQuestion));
    }
}
