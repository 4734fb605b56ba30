//! Simulate, extract and score one case run.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::case::CaseRecord;
use crate::clock::Clock;
use crate::dialogue::{count_steps, run_simulation, CompletionDetector, Doctor, Patient, SimulationLimits, Transcript};
use crate::evaluator::{evaluate_transcript, EvaluationError, ExtractionRecord, Judge};
use crate::scoring::{assemble_dots, DotsRecord};

/// Everything produced by one case run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub run_id: String,
    pub transcript: Transcript,
    pub extraction: ExtractionRecord,
    pub dots: DotsRecord,
    /// Set when the simulation ended on an agent or session failure; the
    /// partial transcript is still scored as an incomplete consultation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("case {case_id}: {error}")]
    Evaluation { case_id: String, error: EvaluationError },
    #[error("unknown case {0:?}")]
    UnknownCase(String),
    #[error("{0}")]
    Runner(String),
}

/// Extraction plus deterministic scoring of a finished transcript.
pub fn score_transcript<J: Judge + ?Sized>(
    transcript: &Transcript,
    case: &CaseRecord,
    judge: &mut J,
) -> Result<(ExtractionRecord, DotsRecord), EvaluationError> {
    let extraction = evaluate_transcript(transcript, case, judge)?;
    let dots = assemble_dots(&extraction, case, count_steps(transcript));
    Ok((extraction, dots))
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_and_score<D: Doctor, P: Patient, J: Judge + ?Sized>(
    case: &CaseRecord,
    doctor: D,
    patient: P,
    judge: &mut J,
    limits: &SimulationLimits,
    detector: &CompletionDetector,
    run_id: &str,
    seed: u64,
    clock: Arc<dyn Clock + Send + Sync>,
) -> Result<CaseOutcome, PipelineError> {
    let (transcript, simulation_error) = match run_simulation(case, doctor, patient, limits, detector, run_id, seed, clock) {
        Ok(t) => (t, None),
        Err(failure) => (failure.transcript, Some(failure.error.to_string())),
    };
    let (extraction, dots) = score_transcript(&transcript, case, judge)
        .map_err(|error| PipelineError::Evaluation { case_id: case.id.clone(), error })?;
    Ok(CaseOutcome { run_id: run_id.into(), transcript, extraction, dots, simulation_error })
}

/// Anything able to execute one case run. Closures qualify.
pub trait CaseRunner {
    fn run_case(&mut self, case: &CaseRecord, run_id: &str, seed: u64) -> Result<CaseOutcome, PipelineError>;
}

impl<F> CaseRunner for F
where
    F: FnMut(&CaseRecord, &str, u64) -> Result<CaseOutcome, PipelineError>,
{
    fn run_case(&mut self, case: &CaseRecord, run_id: &str, seed: u64) -> Result<CaseOutcome, PipelineError> {
        self(case, run_id, seed)
    }
}

pub fn run_id_for(batch_id: &str, case_id: &str, repetition: u32) -> String {
    format!("{batch_id}-{case_id}-r{repetition}")
}

/// Per-case seed derived from the batch seed so runs stay independent of
/// execution order.
pub fn case_seed(batch_seed: u64, case_id: &str, repetition: u32) -> u64 {
    // FNV-1a over the id, mixed with the batch seed and repetition.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in case_id.bytes().chain(repetition.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ batch_seed.rotate_left(17)
}
