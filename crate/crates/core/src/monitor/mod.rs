//! Continuous regression monitoring: trap probes on a schedule, window
//! anomaly detection, escalation with promotion gating, and the three test
//! levels.

mod anomaly;
mod controller;
mod escalation;
mod levels;
mod probe;
mod report;
mod schedule;

pub use anomaly::{
    baselines, detect_anomaly, in_warmup, median, monitored_metrics, window_means, AnomalyPolicy, AnomalyTrigger,
    AnomalyVerdict, BaselineKey, VerdictStatus, WindowStat,
};
pub use controller::{ConfirmCriterion, ConfirmPlan, Monitor, MonitorConfig, ProbeExecutor, TickReport};
pub use escalation::{
    ConfirmPolicy, Effect, EscalationState, Event, Incident, IncidentOutcome, MonitorState, Rejected, TransitionRecord,
    VersionState,
};
pub use levels::{
    check_error_test, error_test_deltas, level3_degraded, run_error_tests, run_level1, run_level2, run_level3,
    DegradationVerdict, ErrorTestVerdict, Level2Report, Level3Checkpoint, Level3Outcome, LevelError, MetaEvalReport,
    MetricCheck, MetricDrop, TrapOutcome, TrapReport,
};
pub use probe::{ProbeResult, ProbeTarget, TrapRule};
pub use report::{mttd_report, weekly_report, HeatmapCell, IncidentDetection, MttdReport, VersionPassRate, WeeklyReport};
pub use schedule::{schedule_probes, ProbeTask, ScheduleConfig, Scheduler, TrapEntry};
