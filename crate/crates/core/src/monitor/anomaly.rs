use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::probe::ProbeResult;
use crate::case::Category;
use crate::clock::{EpochMillis, DAY_MS, HOUR_MS};
use crate::metric::Metric;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyPolicy {
    /// Points a window mean may fall below the baseline median.
    pub delta: f64,
    /// Probes a window needs before its mean is compared.
    pub min_samples: usize,
    pub short_window_ms: i64,
    pub long_window_ms: i64,
    pub baseline_ms: i64,
    /// Case scopes whose trap failures are anomalies outright.
    pub safety_scopes: Vec<String>,
}

impl Default for AnomalyPolicy {
    fn default() -> Self {
        Self {
            delta: 5.0,
            min_samples: 3,
            short_window_ms: HOUR_MS,
            long_window_ms: DAY_MS,
            baseline_ms: 7 * DAY_MS,
            safety_scopes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BaselineKey {
    pub metric: Metric,
    pub category: Category,
    pub model_version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictStatus {
    NoAnomaly,
    Anomaly,
    Warmup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnomalyTrigger {
    SafetyTrapFailure { case_id: String, model_version: String, at: EpochMillis },
    WindowDrop { key: BaselineKey, window_ms: i64, mean: f64, baseline: f64, samples: usize },
}

impl AnomalyTrigger {
    pub fn model_version(&self) -> &str {
        match self {
            AnomalyTrigger::SafetyTrapFailure { model_version, .. } => model_version,
            AnomalyTrigger::WindowDrop { key, .. } => &key.model_version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub status: VerdictStatus,
    pub at: EpochMillis,
    pub triggers: Vec<AnomalyTrigger>,
}

/// Metrics watched by the window detector.
pub fn monitored_metrics() -> impl Iterator<Item = Metric> {
    Metric::ALL.into_iter().filter(|m| m.is_percentage())
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[mid] } else { (values[mid - 1] + values[mid]) / 2.0 })
}

fn grouped<'a>(probes: impl Iterator<Item = &'a ProbeResult>) -> BTreeMap<BaselineKey, Vec<f64>> {
    let mut out: BTreeMap<BaselineKey, Vec<f64>> = BTreeMap::new();
    for p in probes {
        for metric in monitored_metrics() {
            let key = BaselineKey { metric, category: p.category, model_version: p.target.model_version.clone() };
            out.entry(key).or_default().push(p.dots.value(metric));
        }
    }
    out
}

/// Median per (metric, category, version) over the baseline span that ends
/// where the short window begins.
pub fn baselines(probes: &[ProbeResult], now: EpochMillis, policy: &AnomalyPolicy) -> BTreeMap<BaselineKey, f64> {
    let end = now - policy.short_window_ms;
    let start = end - policy.baseline_ms;
    grouped(probes.iter().filter(|p| p.timestamp_ms >= start && p.timestamp_ms < end))
        .into_iter()
        .filter_map(|(k, mut v)| median(&mut v).map(|m| (k, m)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    pub key: BaselineKey,
    pub window_ms: i64,
    pub mean: f64,
    pub samples: usize,
}

/// Means per (metric, category, version) over the window ending at `now`.
pub fn window_means(probes: &[ProbeResult], now: EpochMillis, window_ms: i64) -> Vec<WindowStat> {
    grouped(probes.iter().filter(|p| p.timestamp_ms > now - window_ms && p.timestamp_ms <= now))
        .into_iter()
        .map(|(key, v)| WindowStat { key, window_ms, mean: v.iter().sum::<f64>() / v.len() as f64, samples: v.len() })
        .collect()
}

/// True when fewer than the baseline span of history precedes `now`.
pub fn in_warmup(probes: &[ProbeResult], now: EpochMillis, policy: &AnomalyPolicy) -> bool {
    probes.iter().map(|p| p.timestamp_ms).min().is_none_or(|first| now - first < policy.baseline_ms)
}

/// Compares 1-hour and 24-hour window means against 7-day medians. Failed
/// safety-scope traps inside the short window are anomalies regardless of
/// baseline; window comparisons are suppressed during warm-up.
pub fn detect_anomaly(probes: &[ProbeResult], now: EpochMillis, policy: &AnomalyPolicy) -> AnomalyVerdict {
    let mut triggers: Vec<AnomalyTrigger> = probes
        .iter()
        .filter(|p| p.safety && !p.pass && p.timestamp_ms > now - policy.short_window_ms && p.timestamp_ms <= now)
        .map(|p| AnomalyTrigger::SafetyTrapFailure {
            case_id: p.case_id.clone(),
            model_version: p.target.model_version.clone(),
            at: p.timestamp_ms,
        })
        .collect();
    let warmup = in_warmup(probes, now, policy);
    if !warmup {
        let base = baselines(probes, now, policy);
        for window in [policy.short_window_ms, policy.long_window_ms] {
            for stat in window_means(probes, now, window) {
                let Some(&baseline) = base.get(&stat.key) else { continue };
                if stat.samples >= policy.min_samples && stat.mean < baseline - policy.delta {
                    triggers.push(AnomalyTrigger::WindowDrop {
                        key: stat.key,
                        window_ms: window,
                        mean: stat.mean,
                        baseline,
                        samples: stat.samples,
                    });
                }
            }
        }
    }
    let status = if !triggers.is_empty() {
        VerdictStatus::Anomaly
    } else if warmup {
        VerdictStatus::Warmup
    } else {
        VerdictStatus::NoAnomaly
    };
    AnomalyVerdict { status, at: now, triggers }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::aggregate::tests::dots;
    use crate::clock::MINUTE_MS;
    use crate::monitor::probe::ProbeTarget;

    pub(crate) fn probe(at: EpochMillis, value: f64) -> ProbeResult {
        ProbeResult {
            case_id: "trap".into(),
            category: Category::InternalMedicine,
            target: ProbeTarget::new("v1"),
            timestamp_ms: at,
            dots: dots(value, 5),
            pass: true,
            safety: false,
            latency_ms: 10,
            run_id: None,
        }
    }

    fn stream(until: EpochMillis, value: impl Fn(EpochMillis) -> f64) -> Vec<ProbeResult> {
        (0..).map(|i| i * 15 * MINUTE_MS).take_while(|t| *t <= until).map(|t| probe(t, value(t))).collect()
    }

    #[test]
    fn steady_stream_is_nominal() {
        let now = 8 * DAY_MS;
        let probes = stream(now, |_| 90.0);
        assert_eq!(detect_anomaly(&probes, now, &AnomalyPolicy::default()).status, VerdictStatus::NoAnomaly);
    }

    #[test]
    fn warmup_before_seven_days() {
        let probes = stream(3 * DAY_MS, |_| 90.0);
        assert_eq!(detect_anomaly(&probes, 3 * DAY_MS, &AnomalyPolicy::default()).status, VerdictStatus::Warmup);
    }

    #[test]
    fn ten_point_drop_is_detected_within_an_hour() {
        let t = 8 * DAY_MS + 7 * MINUTE_MS;
        let probes = stream(9 * DAY_MS, |at| if at >= t { 80.0 } else { 90.0 });
        let policy = AnomalyPolicy::default();
        let detected = (0..)
            .map(|i| t + i * 15 * MINUTE_MS)
            .find(|&now| detect_anomaly(&probes, now, &policy).status == VerdictStatus::Anomaly)
            .unwrap();
        assert!(detected - t <= HOUR_MS, "{}", detected - t);
    }

    #[test]
    fn single_outlier_is_not_an_anomaly() {
        let now = 8 * DAY_MS;
        let mut probes = stream(now, |_| 90.0);
        probes.last_mut().unwrap().dots = dots(70.0, 5);
        assert_eq!(detect_anomaly(&probes, now, &AnomalyPolicy::default()).status, VerdictStatus::NoAnomaly);
    }

    #[test]
    fn safety_trap_failure_is_an_anomaly() {
        let now = 8 * DAY_MS;
        let mut probes = stream(now, |_| 90.0);
        let last = probes.last_mut().unwrap();
        last.safety = true;
        last.pass = false;
        let v = detect_anomaly(&probes, now, &AnomalyPolicy::default());
        assert_eq!(v.status, VerdictStatus::Anomaly);
        assert!(matches!(v.triggers[0], AnomalyTrigger::SafetyTrapFailure { .. }));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
