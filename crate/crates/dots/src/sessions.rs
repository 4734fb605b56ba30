//! Human-doctor consultations held open across HTTP requests.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use dots_core::case::CaseBank;
use dots_core::clock::Clock;
use dots_core::dialogue::{FinalRecommendations, FinalizeOutcome, MockPatient, Patient, Session, SessionError, SimulationLimits};
use dots_core::evaluator::NoJudge;
use dots_core::pipeline::score_transcript;
use dots_core::scoring::DotsRecord;
use serde::{Deserialize, Serialize};

use crate::store::{Namespace, RunDraft, RunKind, RunStore, StoreError};

/// Model version recorded for human consultations.
pub const HUMAN_DOCTOR: &str = "human";

#[derive(Debug, thiserror::Error)]
pub enum SessionsError {
    #[error("unknown case {0:?}")]
    UnknownCase(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("scoring failed: {0}")]
    Scoring(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Opened {
    pub session_id: String,
    pub case_id: String,
    pub intro: String,
    pub attachments: Vec<String>,
    pub max_steps: u32,
    pub expected_steps: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reply {
    pub reply: String,
    pub attachments: Vec<String>,
    pub steps: u32,
    pub max_steps: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Finalized {
    Complete { run_id: String, dots: DotsRecord },
    /// The patient added information; finalize again with an amendment.
    FollowUp { text: String, steps: u32 },
}

struct Entry {
    session: Session<Box<dyn Patient + Send>>,
}

/// Registry of open consultations; each handle is driven by one writer.
pub struct SessionRegistry {
    bank: Arc<CaseBank>,
    store: RunStore,
    limits: SimulationLimits,
    clock: Arc<dyn Clock + Send + Sync>,
    next: Mutex<u64>,
    open: Mutex<BTreeMap<String, Arc<Mutex<Entry>>>>,
}

impl SessionRegistry {
    pub fn new(bank: Arc<CaseBank>, store: RunStore, limits: SimulationLimits, clock: Arc<dyn Clock + Send + Sync>) -> Self {
        Self { bank, store, limits, clock, next: Mutex::new(1), open: Mutex::new(BTreeMap::new()) }
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>, SessionsError> {
        self.open
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| SessionsError::UnknownSession(id.into()))
    }

    pub fn open(&self, case_id: &str, seed: u64) -> Result<Opened, SessionsError> {
        let case = self.bank.get(case_id).ok_or_else(|| SessionsError::UnknownCase(case_id.into()))?;
        let n = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let n = *next;
            *next += 1;
            n
        };
        let session_id = format!("human-{}-{n}", self.clock.now_ms());
        let patient: Box<dyn Patient + Send> = Box::new(MockPatient::new(seed));
        let session = Session::open(case, patient, self.limits, &session_id, seed, HUMAN_DOCTOR, Arc::clone(&self.clock))?;
        let intro = &session.transcript().turns[0];
        let opened = Opened {
            session_id: session_id.clone(),
            case_id: case.id.clone(),
            intro: intro.text.clone(),
            attachments: intro.attachments.clone(),
            max_steps: session.max_steps(),
            expected_steps: case.num_steps,
        };
        self.open.lock().unwrap_or_else(|e| e.into_inner()).insert(session_id, Arc::new(Mutex::new(Entry { session })));
        Ok(opened)
    }

    pub fn message(&self, id: &str, text: &str) -> Result<Reply, SessionsError> {
        let entry = self.entry(id)?;
        let mut entry = entry.lock().unwrap_or_else(|e| e.into_inner());
        let turn = entry.session.ask(text)?;
        Ok(Reply { reply: turn.text, attachments: turn.attachments, steps: entry.session.steps(), max_steps: entry.session.max_steps() })
    }

    /// Records the recommendations; on completion the transcript is scored
    /// and committed, and the session handle is released.
    pub fn finalize(&self, id: &str, recommendations: &FinalRecommendations) -> Result<Finalized, SessionsError> {
        let handle = self.entry(id)?;
        let mut entry = handle.lock().unwrap_or_else(|e| e.into_inner());
        match entry.session.finalize(&recommendations.to_message())? {
            FinalizeOutcome::FollowUp { text } => return Ok(Finalized::FollowUp { text, steps: entry.session.steps() }),
            FinalizeOutcome::Complete => {}
        }
        let transcript = entry.session.transcript().clone();
        let case = entry.session.case().clone();
        drop(entry);
        let (extraction, dots) =
            score_transcript(&transcript, &case, &mut NoJudge).map_err(|e| SessionsError::Scoring(e.to_string()))?;
        let draft = RunDraft::new(id, RunKind::HumanSession, Namespace::Evaluation, HUMAN_DOCTOR, self.clock.now_ms())
            .case(&case.id)
            .artifact("transcript", transcript.to_jsonl())
            .json_artifact("extraction", &extraction)
            .json_artifact("dots", &dots);
        self.store.commit(draft)?;
        self.open.lock().unwrap_or_else(|e| e.into_inner()).remove(id);
        Ok(Finalized::Complete { run_id: id.into(), dots })
    }

    pub fn open_count(&self) -> usize {
        self.open.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}
