use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::clock::EpochMillis;
use crate::gateway::{ChatMessage, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Doctor,
    Patient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TurnKind {
    /// Opening patient narrative.
    Intro,
    Question,
    Answer,
    /// Doctor's final recommendation block.
    Final,
    /// Patient message sent after finalization.
    FollowUp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub seq: u32,
    pub speaker: Speaker,
    pub kind: TurnKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<String>,
    pub timestamp_ms: EpochMillis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    DoctorFinalized,
    StepLimit,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub case_id: String,
    pub run_id: String,
    pub turns: Vec<Turn>,
    pub is_conversation_complete: bool,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub doctor: String,
    pub patient: String,
    pub seed: u64,
}

/// Terminal line of a persisted transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSummary {
    pub case_id: String,
    pub run_id: String,
    pub is_conversation_complete: bool,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub doctor: String,
    pub patient: String,
    pub seed: u64,
    pub turn_count: usize,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum TranscriptLine {
    Turn(Turn),
    Summary(TranscriptSummary),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TranscriptError {
    #[error("transcript does not start with the patient intro")]
    MissingIntro,
    #[error("turn sequence numbers are not strictly increasing at index {0}")]
    Sequence(usize),
    #[error("turn {0} breaks doctor/patient alternation")]
    Alternation(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing summary line")]
    MissingSummary,
    #[error("summary reports {expected} turns but {found} were read")]
    TurnCount { expected: usize, found: usize },
}

/// Complete question–answer exchanges: the smaller of the doctor-turn count
/// and the patient-turn count excluding the intro.
pub fn count_steps(transcript: &Transcript) -> u32 {
    let doctor = transcript.turns.iter().filter(|t| t.speaker == Speaker::Doctor).count();
    let patient = transcript
        .turns
        .iter()
        .filter(|t| t.speaker == Speaker::Patient && t.kind != TurnKind::Intro)
        .count();
    doctor.min(patient) as u32
}

impl Transcript {
    /// The last final-recommendation turn, if the doctor finalized.
    pub fn final_block(&self) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| t.kind == TurnKind::Final)
    }

    pub fn doctor_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.speaker == Speaker::Doctor)
    }

    /// True when `quote` occurs verbatim in some turn.
    pub fn contains_quote(&self, quote: &str) -> bool {
        !quote.is_empty() && self.turns.iter().any(|t| t.text.contains(quote))
    }

    /// Dialogue as chat messages from the doctor's point of view.
    pub fn chat_history(&self) -> Vec<ChatMessage> {
        self.turns
            .iter()
            .map(|t| ChatMessage {
                role: match t.speaker {
                    Speaker::Doctor => Role::Doctor,
                    Speaker::Patient => Role::Patient,
                },
                text: t.text.clone(),
                attachments: t.attachments.clone(),
            })
            .collect()
    }

    pub fn check_well_formed(&self) -> Result<(), TranscriptError> {
        match self.turns.first() {
            Some(t) if t.kind == TurnKind::Intro && t.speaker == Speaker::Patient => {}
            _ => return Err(TranscriptError::MissingIntro),
        }
        for (i, pair) in self.turns.windows(2).enumerate() {
            if pair[1].seq <= pair[0].seq {
                return Err(TranscriptError::Sequence(i + 1));
            }
            if pair[1].speaker == pair[0].speaker || pair[1].kind == TurnKind::Intro {
                return Err(TranscriptError::Alternation(i + 1));
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> TranscriptSummary {
        TranscriptSummary {
            case_id: self.case_id.clone(),
            run_id: self.run_id.clone(),
            is_conversation_complete: self.is_conversation_complete,
            termination: self.termination,
            error: self.error.clone(),
            doctor: self.doctor.clone(),
            patient: self.patient.clone(),
            seed: self.seed,
            turn_count: self.turns.len(),
            steps: count_steps(self),
        }
    }

    /// One turn per line followed by a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for turn in &self.turns {
            out.push_str(&serde_json::to_string(&TranscriptLine::Turn(turn.clone())).expect("turn serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&TranscriptLine::Summary(self.summary())).expect("summary serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut turns = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: TranscriptLine = serde_json::from_str(line)
                .map_err(|e| TranscriptError::Parse { line: i + 1, message: format!("{e}") })?;
            match parsed {
                TranscriptLine::Turn(t) => turns.push(t),
                TranscriptLine::Summary(s) => summary = Some(s),
            }
        }
        let s = summary.ok_or(TranscriptError::MissingSummary)?;
        if s.turn_count != turns.len() {
            return Err(TranscriptError::TurnCount { expected: s.turn_count, found: turns.len() });
        }
        Ok(Transcript {
            case_id: s.case_id,
            run_id: s.run_id,
            turns,
            is_conversation_complete: s.is_conversation_complete,
            termination: s.termination,
            error: s.error,
            doctor: s.doctor,
            patient: s.patient,
            seed: s.seed,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    /// Builds a transcript with an intro then the given (speaker, kind) turns.
    pub(crate) fn build(turns: &[(Speaker, TurnKind)]) -> Transcript {
        let mut all = vec![Turn {
            seq: 0,
            speaker: Speaker::Patient,
            kind: TurnKind::Intro,
            text: "intro".into(),
            attachments: vec![],
            timestamp_ms: 0,
        }];
        for (i, (speaker, kind)) in turns.iter().enumerate() {
            all.push(Turn {
                seq: i as u32 + 1,
                speaker: *speaker,
                kind: *kind,
                text: format!("turn {}", i + 1),
                attachments: vec![],
                timestamp_ms: i as i64,
            });
        }
        Transcript {
            case_id: "c".into(),
            run_id: "r".into(),
            turns: all,
            is_conversation_complete: false,
            termination: Termination::StepLimit,
            error: None,
            doctor: "d".into(),
            patient: "p".into(),
            seed: 0,
        }
    }

    fn pairs(n: usize) -> Vec<(Speaker, TurnKind)> {
        (0..n).flat_map(|_| [(Speaker::Doctor, TurnKind::Question), (Speaker::Patient, TurnKind::Answer)]).collect()
    }

    #[test]
    fn steps_count_complete_pairs() {
        assert_eq!(count_steps(&build(&pairs(5))), 5);
        let mut six_five = pairs(5);
        six_five.push((Speaker::Doctor, TurnKind::Final));
        assert_eq!(count_steps(&build(&six_five)), 5);
        assert_eq!(count_steps(&build(&[])), 0);
    }

    #[test]
    fn well_formedness() {
        let mut t = build(&pairs(2));
        assert!(t.check_well_formed().is_ok());
        t.turns.swap(1, 2);
        assert!(t.check_well_formed().is_err());
        let t = build(&[(Speaker::Patient, TurnKind::Answer)]);
        assert_eq!(t.check_well_formed(), Err(TranscriptError::Alternation(1)));
        let mut t = build(&pairs(1));
        t.turns.remove(0);
        assert_eq!(t.check_well_formed(), Err(TranscriptError::MissingIntro));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut t = build(&pairs(3));
        t.turns[2].attachments = vec!["lab.pdf".to_string()];
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), t.turns.len() + 1);
        assert!(text.lines().last().unwrap().contains("\"record\":\"summary\""));
        assert_eq!(Transcript::from_jsonl(&text).unwrap(), t);
    }

    #[test]
    fn jsonl_requires_summary() {
        let t = build(&pairs(1));
        let text = t.to_jsonl();
        let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert_eq!(Transcript::from_jsonl(&truncated), Err(TranscriptError::MissingSummary));
    }
}
