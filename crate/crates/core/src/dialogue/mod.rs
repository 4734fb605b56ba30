//! Step-limited doctor–patient simulation and transcripts.

mod completion;
mod doctor;
mod patient;
mod session;
mod transcript;

pub use completion::{detect_completion, CompletionDetector, FinalRecommendations, DEFAULT_MARKER_PHRASE};
pub use doctor::{Doctor, DoctorError, FnDoctor, ModelDoctor, DOCTOR_CHANNEL};
pub use patient::{
    LlmPatient, MockPatient, Patient, PatientError, PatientReply, CLARIFY_TEMPLATE, PATIENT_CHANNEL, UNCERTAINTY_TEMPLATES,
};
pub use session::{
    run_simulation, FinalizeOutcome, Session, SessionError, SimulationError, SimulationFailure, SimulationLimits,
    DEFAULT_MAX_STEPS,
};
pub use transcript::{count_steps, Speaker, Termination, Transcript, TranscriptError, TranscriptLine, TranscriptSummary, Turn, TurnKind};
