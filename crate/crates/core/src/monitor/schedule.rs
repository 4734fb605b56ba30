use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::probe::{ProbeTarget, TrapRule};
use crate::clock::{EpochMillis, DAY_MS, HOUR_MS};

fn day() -> i64 {
    DAY_MS
}
fn hour() -> i64 {
    HOUR_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapEntry {
    pub case_id: String,
    #[serde(default)]
    pub high_priority: bool,
    #[serde(default)]
    pub rule: TrapRule,
}

impl TrapEntry {
    pub fn new(case_id: &str) -> Self {
        Self { case_id: case_id.into(), high_priority: false, rule: TrapRule::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(default = "day")]
    pub base_interval_ms: i64,
    /// Interval for high-priority cases and cases that failed recently.
    #[serde(default = "hour")]
    pub priority_interval_ms: i64,
    /// How long a failure keeps a case on the priority interval.
    #[serde(default = "day")]
    pub recent_failure_ms: i64,
    pub traps: Vec<TrapEntry>,
    pub targets: Vec<ProbeTarget>,
}

impl ScheduleConfig {
    pub fn new(traps: Vec<TrapEntry>, targets: Vec<ProbeTarget>) -> Self {
        Self { base_interval_ms: DAY_MS, priority_interval_ms: HOUR_MS, recent_failure_ms: DAY_MS, traps, targets }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProbeTask {
    pub due_at: EpochMillis,
    pub case_id: String,
    pub target: ProbeTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Slot {
    next_at: EpochMillis,
    last_failure: Option<EpochMillis>,
    high_priority: bool,
}

/// Adaptive probe timetable: one slot per (trap case, target).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    config: ScheduleConfig,
    #[serde(with = "slot_entries")]
    slots: BTreeMap<(String, ProbeTarget), Slot>,
}

/// JSON objects need string keys, so the slot map is stored as a list.
mod slot_entries {
    use super::{ProbeTarget, Slot};
    use alloc::collections::BTreeMap;
    use alloc::string::String;
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        case_id: String,
        target: ProbeTarget,
        #[serde(flatten)]
        slot: Slot,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<(String, ProbeTarget), Slot>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = map
            .iter()
            .map(|((case_id, target), slot)| Entry { case_id: case_id.clone(), target: target.clone(), slot: slot.clone() })
            .collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(String, ProbeTarget), Slot>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries.into_iter().map(|e| ((e.case_id, e.target), e.slot)).collect())
    }
}

impl Scheduler {
    /// Every slot is due at `start`.
    pub fn new(config: ScheduleConfig, start: EpochMillis) -> Self {
        let mut slots = BTreeMap::new();
        for trap in &config.traps {
            for target in &config.targets {
                slots.insert(
                    (trap.case_id.clone(), target.clone()),
                    Slot { next_at: start, last_failure: None, high_priority: trap.high_priority },
                );
            }
        }
        Self { config, slots }
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    /// Probes due at or before `now`, in (time, case, target) order.
    pub fn due(&self, now: EpochMillis) -> Vec<ProbeTask> {
        let mut out: Vec<ProbeTask> = self
            .slots
            .iter()
            .filter(|(_, s)| s.next_at <= now)
            .map(|((case_id, target), s)| ProbeTask { due_at: s.next_at, case_id: case_id.clone(), target: target.clone() })
            .collect();
        out.sort();
        out
    }

    pub fn next_wakeup(&self) -> Option<EpochMillis> {
        self.slots.values().map(|s| s.next_at).min()
    }

    /// Records a finished probe and reschedules its slot.
    pub fn complete(&mut self, case_id: &str, target: &ProbeTarget, pass: bool, at: EpochMillis) -> Option<EpochMillis> {
        let config = &self.config;
        let slot = self.slots.get_mut(&(String::from(case_id), target.clone()))?;
        if !pass {
            slot.last_failure = Some(at);
        }
        let recent = slot.last_failure.is_some_and(|f| at - f < config.recent_failure_ms);
        let interval = if slot.high_priority || recent { config.priority_interval_ms } else { config.base_interval_ms };
        slot.next_at = at + interval;
        Some(slot.next_at)
    }
}

/// Planned probe timestamps between `start` and `until` assuming every
/// probe passes.
pub fn schedule_probes(config: &ScheduleConfig, start: EpochMillis, until: EpochMillis) -> Vec<ProbeTask> {
    let mut scheduler = Scheduler::new(config.clone(), start);
    let mut out = Vec::new();
    while let Some(next) = scheduler.next_wakeup() {
        if next > until {
            break;
        }
        for task in scheduler.due(next) {
            scheduler.complete(&task.case_id, &task.target, true, task.due_at);
            out.push(task);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn config(versions: &[&str]) -> ScheduleConfig {
        ScheduleConfig::new(
            vec![TrapEntry::new("trap")],
            versions.iter().map(|v| ProbeTarget::new(v)).collect(),
        )
    }

    #[test]
    fn scheduler_survives_json() {
        let mut s = Scheduler::new(config(&["v1", "v2"]), 0);
        s.complete("trap", &ProbeTarget::new("v1"), false, 5);
        let text = serde_json::to_string(&s).unwrap();
        let back: Scheduler = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn base_interval_spacing() {
        let plan = schedule_probes(&config(&["v1"]), 0, 3 * DAY_MS);
        let times: Vec<i64> = plan.iter().map(|p| p.due_at).collect();
        assert_eq!(times, vec![0, DAY_MS, 2 * DAY_MS, 3 * DAY_MS]);
    }

    #[test]
    fn failure_promotes_interval() {
        let mut s = Scheduler::new(config(&["v1"]), 0);
        let t = ProbeTarget::new("v1");
        assert_eq!(s.complete("trap", &t, false, 500), Some(500 + HOUR_MS));
        assert_eq!(s.complete("trap", &t, true, 500 + HOUR_MS), Some(500 + 2 * HOUR_MS));
        assert_eq!(s.complete("trap", &t, true, 500 + DAY_MS), Some(500 + 2 * DAY_MS));
    }

    #[test]
    fn one_entry_per_version() {
        let s = Scheduler::new(config(&["v1", "v2"]), 0);
        assert_eq!(s.due(0).len(), 2);
        let mut cfg = config(&["v1"]);
        cfg.traps[0].high_priority = true;
        let plan = schedule_probes(&cfg, 0, 2 * HOUR_MS);
        assert_eq!(plan.len(), 3);
    }
}
