//! Single-writer control loop: runs due probes, detects anomalies and
//! drives the escalation machine, carrying out its effects.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::anomaly::{detect_anomaly, in_warmup, AnomalyPolicy, AnomalyTrigger, AnomalyVerdict, VerdictStatus};
use super::escalation::{ConfirmPolicy, Effect, EscalationState, Event, Incident, MonitorState, Rejected};
use super::levels::DegradationVerdict;
use super::probe::{ProbeResult, ProbeTarget};
use super::report::{mttd_report, MttdReport};
use super::schedule::{ProbeTask, ScheduleConfig, Scheduler};
use crate::clock::EpochMillis;
use crate::metric::Metric;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub anomaly: AnomalyPolicy,
    #[serde(default)]
    pub confirm: ConfirmPolicy,
    /// Points a Level-3 average may fall below its reference.
    #[serde(default = "default_level3_delta")]
    pub level3_delta: f64,
}

fn default_level3_delta() -> f64 {
    5.0
}

impl MonitorConfig {
    pub fn new(schedule: ScheduleConfig) -> Self {
        Self {
            schedule,
            anomaly: AnomalyPolicy::default(),
            confirm: ConfirmPolicy::default(),
            level3_delta: default_level3_delta(),
        }
    }
}

/// Workers the loop hands probes and regression runs to.
pub trait ProbeExecutor {
    fn probe(&mut self, case_id: &str, target: &ProbeTarget, at: EpochMillis) -> ProbeResult;
    fn level3(&mut self, model_version: &str, at: EpochMillis) -> DegradationVerdict;
}

/// How a confirmation round is judged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfirmCriterion {
    /// Any re-probed trap failing its rule fails the round.
    TrapRule,
    /// The round fails when its mean on `metric` stays below `threshold`.
    Below { metric: Metric, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmPlan {
    pub probes: Vec<(String, ProbeTarget)>,
    pub criterion: ConfirmCriterion,
}

impl ConfirmPlan {
    pub fn round_failed(&self, results: &[ProbeResult]) -> bool {
        match &self.criterion {
            ConfirmCriterion::TrapRule => results.iter().any(|p| !p.pass),
            ConfirmCriterion::Below { metric, threshold } => {
                if results.is_empty() {
                    return false;
                }
                let mean = results.iter().map(|p| p.dots.value(*metric)).sum::<f64>() / results.len() as f64;
                mean < *threshold
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TickReport {
    pub at: EpochMillis,
    pub probes: Vec<ProbeResult>,
    pub verdict: Option<AnomalyVerdict>,
    pub transitions: Vec<(String, EscalationState, EscalationState)>,
    pub notifications: Vec<Incident>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    config: MonitorConfig,
    scheduler: Scheduler,
    pub state: MonitorState,
    probes: Vec<ProbeResult>,
    notifications: Vec<Incident>,
}

impl Monitor {
    pub fn new(config: MonitorConfig, start: EpochMillis) -> Self {
        let scheduler = Scheduler::new(config.schedule.clone(), start);
        let mut state = MonitorState::new(config.confirm);
        state.warmup = true;
        Self { config, scheduler, state, probes: Vec::new(), notifications: Vec::new() }
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn probes(&self) -> &[ProbeResult] {
        &self.probes
    }

    /// Seeds probe history, e.g. from the run store after a restart.
    pub fn preload(&mut self, probes: impl IntoIterator<Item = ProbeResult>) {
        self.probes.extend(probes);
        self.probes.sort_by_key(|p| p.timestamp_ms);
    }

    pub fn notifications(&self) -> &[Incident] {
        &self.notifications
    }

    pub fn next_wakeup(&self) -> Option<EpochMillis> {
        self.scheduler.next_wakeup()
    }

    pub fn due(&self, now: EpochMillis) -> Vec<ProbeTask> {
        self.scheduler.due(now)
    }

    pub fn gate(&self, version: &str) -> bool {
        self.state.gate(version)
    }

    pub fn mttd(&self) -> MttdReport {
        mttd_report(&self.state.incidents)
    }

    /// One full cycle: runs every due probe, then reacts to the results.
    pub fn tick<E: ProbeExecutor + ?Sized>(&mut self, now: EpochMillis, executor: &mut E) -> TickReport {
        let results: Vec<ProbeResult> = self
            .scheduler
            .due(now)
            .into_iter()
            .map(|task| executor.probe(&task.case_id, &task.target, now))
            .collect();
        self.ingest(now, results, executor)
    }

    /// Records scheduled probe results (possibly produced concurrently) in
    /// task order, then runs detection and escalation.
    pub fn ingest<E: ProbeExecutor + ?Sized>(
        &mut self,
        now: EpochMillis,
        results: Vec<ProbeResult>,
        executor: &mut E,
    ) -> TickReport {
        let mut report = TickReport { at: now, ..TickReport::default() };
        for p in &results {
            self.scheduler.complete(&p.case_id, &p.target, p.pass, now);
        }
        self.probes.extend(results.iter().cloned());
        report.probes = results;
        self.state.warmup = in_warmup(&self.probes, now, &self.config.anomaly);

        let verdict = detect_anomaly(&self.probes, now, &self.config.anomaly);
        let mut plans: BTreeMap<String, (String, EpochMillis, ConfirmPlan)> = BTreeMap::new();
        for trigger in &verdict.triggers {
            let version = trigger.model_version();
            if plans.contains_key(version) {
                continue;
            }
            plans.insert(version.into(), self.plan_for(trigger, now));
        }
        // Failed trap probes escalate on their own; they need no baseline.
        for p in report.probes.iter().filter(|p| !p.pass) {
            plans.entry(p.target.model_version.clone()).or_insert_with(|| {
                (
                    format!("trap {} failed", p.case_id),
                    p.timestamp_ms,
                    ConfirmPlan { probes: alloc::vec![(p.case_id.clone(), p.target.clone())], criterion: ConfirmCriterion::TrapRule },
                )
            });
        }
        if verdict.status != VerdictStatus::NoAnomaly || !plans.is_empty() {
            report.verdict = Some(verdict.clone());
        }
        for (version, (reason, first_failure_at, plan)) in plans {
            if self.state.state_of(&version) != EscalationState::Nominal {
                continue;
            }
            let event = Event::TrapFail { reason, first_failure_at, detected_at: now };
            self.drive(&version, event, now, &plan, executor, &mut report);
        }
        report
    }

    fn plan_for(&self, trigger: &AnomalyTrigger, now: EpochMillis) -> (String, EpochMillis, ConfirmPlan) {
        match trigger {
            AnomalyTrigger::SafetyTrapFailure { case_id, model_version, at } => {
                let target = self
                    .probes
                    .iter()
                    .rev()
                    .find(|p| &p.case_id == case_id && &p.target.model_version == model_version)
                    .map(|p| p.target.clone())
                    .unwrap_or_else(|| ProbeTarget::new(model_version));
                (
                    format!("safety trap {case_id} failed"),
                    *at,
                    ConfirmPlan { probes: alloc::vec![(case_id.clone(), target)], criterion: ConfirmCriterion::TrapRule },
                )
            }
            AnomalyTrigger::WindowDrop { key, window_ms, mean, baseline, .. } => {
                let threshold = baseline - self.config.anomaly.delta;
                let in_window: Vec<&ProbeResult> = self
                    .probes
                    .iter()
                    .filter(|p| {
                        p.timestamp_ms > now - window_ms
                            && p.timestamp_ms <= now
                            && p.category == key.category
                            && p.target.model_version == key.model_version
                    })
                    .collect();
                let first = in_window
                    .iter()
                    .find(|p| p.dots.value(key.metric) < threshold)
                    .map_or(now - window_ms, |p| p.timestamp_ms);
                let mut probes: Vec<(String, ProbeTarget)> =
                    in_window.iter().map(|p| (p.case_id.clone(), p.target.clone())).collect();
                probes.sort();
                probes.dedup();
                (
                    format!(
                        "{} for {} fell to {mean:.2} against baseline {baseline:.2}",
                        key.metric.name(),
                        key.category.name()
                    ),
                    first,
                    ConfirmPlan { probes, criterion: ConfirmCriterion::Below { metric: key.metric, threshold } },
                )
            }
        }
    }

    fn apply(&mut self, version: &str, event: Event, at: EpochMillis, report: &mut TickReport) -> Result<Vec<Effect>, Rejected> {
        let from = self.state.state_of(version);
        let effects = self.state.escalate(version, event, at)?;
        report.transitions.push((version.into(), from, self.state.state_of(version)));
        Ok(effects)
    }

    /// Feeds `event` and then every follow-up the resulting effects call
    /// for, until the machine rests.
    fn drive<E: ProbeExecutor + ?Sized>(
        &mut self,
        version: &str,
        event: Event,
        now: EpochMillis,
        plan: &ConfirmPlan,
        executor: &mut E,
        report: &mut TickReport,
    ) {
        let mut queue: Vec<Event> = alloc::vec![event];
        while let Some(event) = queue.pop() {
            let Ok(effects) = self.apply(version, event, now, report) else { continue };
            if self.state.state_of(version) == EscalationState::TrapFailed {
                queue.push(Event::StartConfirm);
            }
            for effect in effects {
                match effect {
                    Effect::Confirm { reruns, .. } => {
                        for _ in 0..reruns {
                            let round: Vec<ProbeResult> =
                                plan.probes.iter().map(|(case, target)| executor.probe(case, target, now)).collect();
                            let failed = plan.round_failed(&round);
                            self.probes.extend(round);
                            let Ok(fx) = self.apply(version, Event::ConfirmResult { failed }, now, report) else { break };
                            if self.state.state_of(version) != EscalationState::Confirming {
                                // Re-enter the loop with the follow-up effects.
                                for e in fx {
                                    self.handle_effect(version, e, now, executor, report, &mut queue);
                                }
                                break;
                            }
                        }
                    }
                    other => self.handle_effect(version, other, now, executor, report, &mut queue),
                }
            }
        }
    }

    fn handle_effect<E: ProbeExecutor + ?Sized>(
        &mut self,
        version: &str,
        effect: Effect,
        now: EpochMillis,
        executor: &mut E,
        report: &mut TickReport,
        queue: &mut Vec<Event>,
    ) {
        match effect {
            Effect::LaunchLevel3 { .. } => {
                let verdict = executor.level3(version, now);
                queue.push(Event::Level3Result { degraded: verdict.degraded });
            }
            Effect::Notify { incident } => {
                report.notifications.push(incident.clone());
                self.notifications.push(incident);
                queue.push(Event::NotifyAndBlock);
            }
            Effect::Confirm { .. } => {}
        }
    }

    pub fn fix_validated(&mut self, version: &str, at: EpochMillis) -> Result<(), Rejected> {
        self.state.escalate(version, Event::FixValidated, at).map(drop)
    }

    /// A failed revalidation keeps the version in REMEDIATION.
    pub fn revalidation(&mut self, version: &str, passed: bool, at: EpochMillis) -> Result<(), Rejected> {
        if self.state.state_of(version) != EscalationState::Remediation {
            return Err(Rejected { state: self.state.state_of(version), event: "revalidation_passed" });
        }
        if passed {
            self.state.escalate(version, Event::RevalidationPassed, at)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::tests::dots;
    use crate::case::Category;
    use crate::clock::HOUR_MS;
    use crate::monitor::schedule::TrapEntry;

    struct Synthetic {
        fail_from: Option<EpochMillis>,
        transient_at: Option<EpochMillis>,
        degraded: bool,
        level3_calls: u32,
    }

    impl ProbeExecutor for Synthetic {
        fn probe(&mut self, case_id: &str, target: &ProbeTarget, at: EpochMillis) -> ProbeResult {
            let transient = self.transient_at == Some(at);
            if transient {
                self.transient_at = None;
            }
            let broken = transient || self.fail_from.is_some_and(|t| at >= t);
            ProbeResult {
                case_id: case_id.into(),
                category: Category::InternalMedicine,
                target: target.clone(),
                timestamp_ms: at,
                dots: dots(if broken { 0.0 } else { 100.0 }, 5),
                pass: !broken,
                safety: false,
                latency_ms: 5,
                run_id: None,
            }
        }

        fn level3(&mut self, _: &str, _: EpochMillis) -> DegradationVerdict {
            self.level3_calls += 1;
            DegradationVerdict { degraded: self.degraded, drops: Vec::new() }
        }
    }

    fn monitor() -> Monitor {
        let mut schedule = ScheduleConfig::new(alloc::vec![TrapEntry::new("trap")], alloc::vec![ProbeTarget::new("v1")]);
        schedule.base_interval_ms = HOUR_MS;
        Monitor::new(MonitorConfig::new(schedule), 0)
    }

    #[test]
    fn transient_failure_returns_to_nominal() {
        let mut m = monitor();
        let mut ex = Synthetic { fail_from: None, transient_at: Some(3 * HOUR_MS), degraded: true, level3_calls: 0 };
        for h in 0..6 {
            m.tick(h * HOUR_MS, &mut ex);
        }
        assert_eq!(m.state.state_of("v1"), EscalationState::Nominal);
        assert_eq!(ex.level3_calls, 0);
        assert_eq!(m.state.incidents.len(), 1);
        assert!(m.gate("v1"));
    }

    #[test]
    fn persistent_failure_blocks_after_confirmation_and_level3() {
        let mut m = monitor();
        let mut ex = Synthetic { fail_from: Some(2 * HOUR_MS), transient_at: None, degraded: true, level3_calls: 0 };
        for h in 0..4 {
            m.tick(h * HOUR_MS, &mut ex);
        }
        assert_eq!(m.state.state_of("v1"), EscalationState::Blocked);
        assert!(!m.gate("v1"));
        assert_eq!(m.notifications().len(), 1);
        let path: Vec<EscalationState> = m.state.history.iter().map(|t| t.to).collect();
        use EscalationState as S;
        assert_eq!(
            &path[..4],
            [S::TrapFailed, S::Confirming, S::Confirming, S::RegressionRunning]
        );
        assert_eq!(m.mttd().count, 1);
        m.fix_validated("v1", 5 * HOUR_MS).unwrap();
        m.revalidation("v1", true, 6 * HOUR_MS).unwrap();
        assert!(m.gate("v1"));
    }

    #[test]
    fn clean_level3_never_blocks() {
        let mut m = monitor();
        let mut ex = Synthetic { fail_from: Some(0), transient_at: None, degraded: false, level3_calls: 0 };
        m.tick(0, &mut ex);
        assert_eq!(ex.level3_calls, 1);
        assert_eq!(m.state.state_of("v1"), EscalationState::Nominal);
        assert!(m.gate("v1"));
    }
}
