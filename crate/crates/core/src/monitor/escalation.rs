//! Per-version escalation state machine and incident bookkeeping.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::clock::EpochMillis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EscalationState {
    #[default]
    Nominal,
    TrapFailed,
    Confirming,
    RegressionRunning,
    DegradationConfirmed,
    Blocked,
    Remediation,
}

/// Re-run policy applied in CONFIRMING.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfirmPolicy {
    pub reruns: u32,
    pub failures_needed: u32,
}

impl Default for ConfirmPolicy {
    fn default() -> Self {
        Self { reruns: 3, failures_needed: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    TrapFail { reason: String, first_failure_at: EpochMillis, detected_at: EpochMillis },
    StartConfirm,
    ConfirmResult { failed: bool },
    Level3Result { degraded: bool },
    NotifyAndBlock,
    FixValidated,
    RevalidationPassed,
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::TrapFail { .. } => "trap_fail",
            Event::StartConfirm => "start_confirm",
            Event::ConfirmResult { .. } => "confirm_result",
            Event::Level3Result { .. } => "level3_result",
            Event::NotifyAndBlock => "notify_and_block",
            Event::FixValidated => "fix_validated",
            Event::RevalidationPassed => "revalidation_passed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentOutcome {
    /// Confirmation or Level 3 came back clean.
    Cleared,
    /// Blocked, then fixed and revalidated.
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub id: u64,
    pub model_version: String,
    pub reason: String,
    pub first_failure_at: EpochMillis,
    pub detected_at: EpochMillis,
    #[serde(default)]
    pub resolved_at: Option<EpochMillis>,
    #[serde(default)]
    pub outcome: Option<IncidentOutcome>,
    /// Confirmation re-runs reproduced the failure.
    #[serde(default)]
    pub confirmed: bool,
    #[serde(default)]
    pub blocked: bool,
}

impl Incident {
    pub fn time_to_detection_ms(&self) -> i64 {
        self.detected_at - self.first_failure_at
    }

    pub fn is_open(&self) -> bool {
        self.outcome.is_none()
    }
}

/// Side effects the control loop must carry out after a transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    Confirm { model_version: String, reruns: u32 },
    LaunchLevel3 { model_version: String },
    Notify { incident: Incident },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub model_version: String,
    pub from: EscalationState,
    pub to: EscalationState,
    pub event: String,
    pub at: EpochMillis,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event {event} is not valid in state {state:?}")]
pub struct Rejected {
    pub state: EscalationState,
    pub event: &'static str,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VersionState {
    pub state: EscalationState,
    pub confirm_runs: u32,
    pub confirm_failures: u32,
    /// Index into `MonitorState::incidents` of the incident being handled.
    pub open_incident: Option<usize>,
}

/// The whole monitor: one state machine per model version plus the
/// incident log and transition history.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MonitorState {
    pub policy: ConfirmPolicy,
    pub versions: BTreeMap<String, VersionState>,
    pub incidents: Vec<Incident>,
    pub history: Vec<TransitionRecord>,
    /// Set while less than the baseline span of probe history exists.
    pub warmup: bool,
}

impl MonitorState {
    pub fn new(policy: ConfirmPolicy) -> Self {
        Self { policy, ..Self::default() }
    }

    pub fn state_of(&self, version: &str) -> EscalationState {
        self.versions.get(version).map_or(EscalationState::Nominal, |v| v.state)
    }

    /// Promotion gate: false exactly for BLOCKED versions.
    pub fn gate(&self, version: &str) -> bool {
        self.state_of(version) != EscalationState::Blocked
    }

    pub fn blocked_versions(&self) -> Vec<String> {
        self.versions
            .iter()
            .filter(|(_, v)| v.state == EscalationState::Blocked)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn open_incident(&self, version: &str) -> Option<&Incident> {
        self.versions.get(version)?.open_incident.and_then(|i| self.incidents.get(i))
    }

    /// Applies one event to one version. Invalid events leave the state
    /// untouched and return `Rejected`.
    pub fn escalate(&mut self, version: &str, event: Event, at: EpochMillis) -> Result<Vec<Effect>, Rejected> {
        use EscalationState as S;
        let policy = self.policy;
        let entry = self.versions.entry(version.into()).or_default();
        let from = entry.state;
        let name = event.name();
        let reject = || Rejected { state: from, event: name };
        let mut effects = Vec::new();
        let mut close: Option<IncidentOutcome> = None;
        let to = match (from, event) {
            (S::Nominal, Event::TrapFail { reason, first_failure_at, detected_at }) => {
                let id = self.incidents.len() as u64 + 1;
                self.incidents.push(Incident {
                    id,
                    model_version: version.into(),
                    reason,
                    first_failure_at,
                    detected_at,
                    resolved_at: None,
                    outcome: None,
                    confirmed: false,
                    blocked: false,
                });
                entry.open_incident = Some(self.incidents.len() - 1);
                S::TrapFailed
            }
            (S::TrapFailed, Event::StartConfirm) => {
                entry.confirm_runs = 0;
                entry.confirm_failures = 0;
                effects.push(Effect::Confirm { model_version: version.into(), reruns: policy.reruns });
                S::Confirming
            }
            (S::Confirming, Event::ConfirmResult { failed }) => {
                entry.confirm_runs += 1;
                entry.confirm_failures += u32::from(failed);
                if entry.confirm_failures >= policy.failures_needed {
                    if let Some(incident) = entry.open_incident.and_then(|i| self.incidents.get_mut(i)) {
                        incident.confirmed = true;
                    }
                    effects.push(Effect::LaunchLevel3 { model_version: version.into() });
                    S::RegressionRunning
                } else if entry.confirm_runs >= policy.reruns {
                    close = Some(IncidentOutcome::Cleared);
                    S::Nominal
                } else {
                    S::Confirming
                }
            }
            (S::RegressionRunning, Event::Level3Result { degraded: true }) => {
                if let Some(incident) = entry.open_incident.and_then(|i| self.incidents.get(i)) {
                    effects.push(Effect::Notify { incident: incident.clone() });
                }
                S::DegradationConfirmed
            }
            (S::RegressionRunning, Event::Level3Result { degraded: false }) => {
                close = Some(IncidentOutcome::Cleared);
                S::Nominal
            }
            (S::DegradationConfirmed, Event::NotifyAndBlock) => {
                if let Some(incident) = entry.open_incident.and_then(|i| self.incidents.get_mut(i)) {
                    incident.blocked = true;
                }
                S::Blocked
            }
            (S::Blocked, Event::FixValidated) => S::Remediation,
            (S::Remediation, Event::RevalidationPassed) => {
                close = Some(IncidentOutcome::Resolved);
                S::Nominal
            }
            _ => return Err(reject()),
        };
        if let Some(outcome) = close {
            if let Some(incident) = entry.open_incident.take().and_then(|i| self.incidents.get_mut(i)) {
                incident.outcome = Some(outcome);
                incident.resolved_at = Some(at);
            }
        }
        entry.state = to;
        self.history.push(TransitionRecord { model_version: version.into(), from, to, event: name.into(), at });
        Ok(effects)
    }
}
