use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::completion::{CompletionDetector, FinalRecommendations};
use super::doctor::{Doctor, DoctorError};
use super::patient::{Patient, PatientError};
use super::transcript::{Speaker, Termination, Transcript, Turn, TurnKind};
use crate::case::{CaseRecord, RevealPolicy};
use crate::clock::{Clock, EpochMillis};
use crate::gateway::ChatMessage;
use crate::text::contains_phrase;

pub const DEFAULT_MAX_STEPS: u32 = 20;

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationLimits {
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    /// Longest a single doctor turn may take.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_timeout_ms: Option<i64>,
    /// Wall-clock budget for the whole consultation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_budget_ms: Option<i64>,
}

impl Default for SimulationLimits {
    fn default() -> Self {
        Self { max_steps: DEFAULT_MAX_STEPS, turn_timeout_ms: None, total_budget_ms: None }
    }
}

impl SimulationLimits {
    /// Step limit for `case`, honoring its per-case override.
    pub fn steps_for(&self, case: &CaseRecord) -> u32 {
        case.max_steps.unwrap_or(self.max_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("max_steps must be at least 1")]
    InvalidLimits,
    #[error("session is closed")]
    Closed,
    #[error("step limit of {max} reached")]
    StepLimitReached { max: u32 },
    #[error("session wall-clock budget exhausted")]
    SessionExpired,
    #[error("doctor message is empty")]
    EmptyMessage,
    #[error("final recommendations are empty")]
    EmptyRecommendations,
    #[error("the patient is waiting for amended recommendations")]
    AwaitingAmendment,
    #[error(transparent)]
    Patient(#[from] PatientError),
}

/// Result of submitting final recommendations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FinalizeOutcome {
    /// The consultation is complete.
    Complete,
    /// The patient came back with a forgotten fact; the doctor must submit
    /// amended recommendations.
    FollowUp { text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Open,
    AwaitingAmendment,
    Closed,
}

/// One consultation, driven either by the simulation loop or by a human
/// through the service.
pub struct Session<P> {
    case: CaseRecord,
    patient: P,
    transcript: Transcript,
    max_steps: u32,
    limits: SimulationLimits,
    clock: Arc<dyn Clock + Send + Sync>,
    started_at: EpochMillis,
    steps: u32,
    released: BTreeSet<usize>,
    phase: Phase,
    follow_up_used: bool,
}

impl<P: Patient> Session<P> {
    pub fn open(
        case: &CaseRecord,
        mut patient: P,
        limits: SimulationLimits,
        run_id: &str,
        seed: u64,
        doctor: &str,
        clock: Arc<dyn Clock + Send + Sync>,
    ) -> Result<Self, SessionError> {
        let max_steps = limits.steps_for(case);
        if max_steps == 0 {
            return Err(SessionError::InvalidLimits);
        }
        patient.begin(case, seed);
        let started_at = clock.now_ms();
        let mut released = BTreeSet::new();
        let mut intro_attachments = Vec::new();
        for (i, a) in case.attachments.iter().enumerate() {
            if a.reveal == RevealPolicy::AtIntro {
                released.insert(i);
                intro_attachments.push(a.content_ref.clone());
            }
        }
        let transcript = Transcript {
            case_id: case.id.clone(),
            run_id: run_id.to_string(),
            turns: alloc::vec![Turn {
                seq: 0,
                speaker: Speaker::Patient,
                kind: TurnKind::Intro,
                text: case.intro.clone(),
                attachments: intro_attachments,
                timestamp_ms: started_at,
            }],
            is_conversation_complete: false,
            termination: Termination::StepLimit,
            error: None,
            doctor: doctor.to_string(),
            patient: patient.describe(),
            seed,
        };
        Ok(Self {
            case: case.clone(),
            patient,
            transcript,
            max_steps,
            limits,
            clock,
            started_at,
            steps: 0,
            released,
            phase: Phase::Open,
            follow_up_used: false,
        })
    }

    pub fn case(&self) -> &CaseRecord {
        &self.case
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    pub fn awaiting_amendment(&self) -> bool {
        self.phase == Phase::AwaitingAmendment
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    /// The dialogue as the doctor sees it.
    pub fn doctor_history(&self) -> Vec<ChatMessage> {
        self.transcript.chat_history()
    }

    fn push(&mut self, speaker: Speaker, kind: TurnKind, text: String, attachments: Vec<String>) -> &Turn {
        let seq = self.transcript.turns.last().map_or(0, |t| t.seq + 1);
        let timestamp_ms = self.clock.now_ms();
        self.transcript.turns.push(Turn { seq, speaker, kind, text, attachments, timestamp_ms });
        self.transcript.turns.last().expect("just pushed")
    }

    fn check_budget(&mut self) -> Result<(), SessionError> {
        if let Some(budget) = self.limits.total_budget_ms {
            if self.clock.now_ms() - self.started_at > budget {
                self.close(Termination::Error, Some(SessionError::SessionExpired.to_string()));
                return Err(SessionError::SessionExpired);
            }
        }
        Ok(())
    }

    fn check_open(&self) -> Result<(), SessionError> {
        match self.phase {
            Phase::Closed => Err(SessionError::Closed),
            _ => Ok(()),
        }
    }

    /// Ends the session without a final block.
    pub fn close(&mut self, termination: Termination, error: Option<String>) {
        if self.phase == Phase::Closed {
            return;
        }
        self.phase = Phase::Closed;
        self.transcript.termination = termination;
        self.transcript.is_conversation_complete = termination == Termination::DoctorFinalized;
        self.transcript.error = error;
    }

    /// On-request attachments whose name or kind the message mentions.
    fn requested_attachments(&mut self, message: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (i, a) in self.case.attachments.iter().enumerate() {
            if self.released.contains(&i) {
                continue;
            }
            let asked = contains_phrase(message, &a.name)
                || contains_phrase(message, a.kind.label())
                || a.kind.request_words().iter().any(|w| contains_phrase(message, w));
            if asked {
                self.released.insert(i);
                out.push(a.content_ref.clone());
            }
        }
        out
    }

    /// Records a doctor question and the patient's answer.
    pub fn ask(&mut self, question: &str) -> Result<Turn, SessionError> {
        self.check_open()?;
        if self.phase == Phase::AwaitingAmendment {
            return Err(SessionError::AwaitingAmendment);
        }
        self.check_budget()?;
        if question.trim().is_empty() {
            return Err(SessionError::EmptyMessage);
        }
        if self.steps >= self.max_steps {
            return Err(SessionError::StepLimitReached { max: self.max_steps });
        }
        let history = self.transcript.chat_history();
        let reply = self.patient.reply(&self.case, &history, question)?;
        let attachments = self.requested_attachments(question);
        self.push(Speaker::Doctor, TurnKind::Question, question.to_string(), Vec::new());
        self.steps += 1;
        Ok(self.push(Speaker::Patient, TurnKind::Answer, reply.text, attachments).clone())
    }

    /// Records the doctor's final recommendation block.
    pub fn finalize(&mut self, recommendations: &str) -> Result<FinalizeOutcome, SessionError> {
        self.check_open()?;
        self.check_budget()?;
        let empty_block = FinalRecommendations::parse(recommendations).is_some_and(|b| b.is_empty());
        if recommendations.trim().is_empty() || empty_block {
            return Err(SessionError::EmptyRecommendations);
        }
        self.push(Speaker::Doctor, TurnKind::Final, recommendations.to_string(), Vec::new());
        if self.phase == Phase::Open && !self.follow_up_used && self.steps < self.max_steps {
            if let Some(text) = self.patient.follow_up(&self.case) {
                self.follow_up_used = true;
                self.steps += 1;
                self.push(Speaker::Patient, TurnKind::FollowUp, text.clone(), Vec::new());
                self.phase = Phase::AwaitingAmendment;
                return Ok(FinalizeOutcome::FollowUp { text });
            }
        }
        self.close(Termination::DoctorFinalized, None);
        Ok(FinalizeOutcome::Complete)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimulationError {
    #[error(transparent)]
    DoctorUnreachable(#[from] DoctorError),
    #[error("doctor turn exceeded {limit_ms} ms")]
    DoctorTimeout { limit_ms: i64 },
    #[error("patient agent failure: {0}")]
    PatientAgentFailure(PatientError),
    #[error(transparent)]
    Session(SessionError),
}

impl From<SessionError> for SimulationError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Patient(p) => SimulationError::PatientAgentFailure(p),
            other => SimulationError::Session(other),
        }
    }
}

/// A failed run still yields the partial transcript, marked as an error.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("simulation failed: {error}")]
pub struct SimulationFailure {
    pub error: SimulationError,
    pub transcript: Transcript,
}

/// Runs one consultation: the doctor speaks until it finalizes or the step
/// limit is exhausted. The doctor is not asked again once the limit is hit.
#[allow(clippy::too_many_arguments)]
pub fn run_simulation<D: Doctor, P: Patient>(
    case: &CaseRecord,
    mut doctor: D,
    patient: P,
    limits: &SimulationLimits,
    detector: &CompletionDetector,
    run_id: &str,
    seed: u64,
    clock: Arc<dyn Clock + Send + Sync>,
) -> Result<Transcript, SimulationFailure> {
    let mut session = match Session::open(case, patient, *limits, run_id, seed, &doctor.describe(), clock.clone()) {
        Ok(s) => s,
        Err(error) => {
            let transcript = Transcript {
                case_id: case.id.clone(),
                run_id: run_id.to_string(),
                turns: Vec::new(),
                is_conversation_complete: false,
                termination: Termination::Error,
                error: Some(error.to_string()),
                doctor: doctor.describe(),
                patient: String::new(),
                seed,
            };
            return Err(SimulationFailure { error: error.into(), transcript });
        }
    };
    let fail = |mut session: Session<P>, error: SimulationError| {
        session.close(Termination::Error, Some(format!("{error}")));
        Err(SimulationFailure { error, transcript: session.into_transcript() })
    };
    loop {
        if session.is_closed() {
            break;
        }
        if !session.awaiting_amendment() && session.steps() >= session.max_steps() {
            session.close(Termination::StepLimit, None);
            break;
        }
        let history = session.doctor_history();
        let asked_at = clock.now_ms();
        let message = match doctor.next_message(&history) {
            Ok(m) => m,
            Err(e) => return fail(session, e.into()),
        };
        if let Some(limit_ms) = limits.turn_timeout_ms {
            if clock.now_ms() - asked_at > limit_ms {
                return fail(session, SimulationError::DoctorTimeout { limit_ms });
            }
        }
        let outcome = if session.awaiting_amendment() || detector.is_final(&message) {
            session.finalize(&message).map(|_| ())
        } else {
            session.ask(&message).map(|_| ())
        };
        if let Err(e) = outcome {
            return fail(session, e.into());
        }
    }
    Ok(session.into_transcript())
}
