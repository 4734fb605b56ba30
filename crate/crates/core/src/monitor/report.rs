use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::anomaly::median;
use super::escalation::Incident;
use super::probe::ProbeResult;
use crate::case::Category;
use crate::clock::EpochMillis;
use crate::metric::Metric;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentDetection {
    pub incident_id: u64,
    pub model_version: String,
    pub detection_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MttdReport {
    pub count: usize,
    pub mean_ms: Option<f64>,
    pub median_ms: Option<f64>,
    pub incidents: Vec<IncidentDetection>,
}

/// Time to detection per incident with mean and median.
pub fn mttd_report(incidents: &[Incident]) -> MttdReport {
    let rows: Vec<IncidentDetection> = incidents
        .iter()
        .map(|i| IncidentDetection {
            incident_id: i.id,
            model_version: i.model_version.clone(),
            detection_ms: i.time_to_detection_ms(),
        })
        .collect();
    let mut values: Vec<f64> = rows.iter().map(|r| r.detection_ms as f64).collect();
    let mean_ms = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
    MttdReport { count: rows.len(), mean_ms, median_ms: median(&mut values), incidents: rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub category: Category,
    pub metric: Metric,
    pub mean: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionPassRate {
    pub model_version: String,
    pub probes: usize,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyReport {
    pub week_start: EpochMillis,
    pub week_end: EpochMillis,
    pub probe_count: usize,
    pub pass_rates: Vec<VersionPassRate>,
    /// Incidents detected this week whose failure was confirmed.
    pub regressions: Vec<Incident>,
    /// Trap cases configured but never probed during the week.
    pub coverage_gaps: Vec<String>,
    /// Mean of each percentage metric per clinical category.
    pub heatmap: Vec<HeatmapCell>,
    pub mttd: MttdReport,
}

pub fn weekly_report(
    probes: &[ProbeResult],
    incidents: &[Incident],
    trap_ids: &[String],
    week_start: EpochMillis,
    week_end: EpochMillis,
) -> WeeklyReport {
    let in_week: Vec<&ProbeResult> =
        probes.iter().filter(|p| p.timestamp_ms >= week_start && p.timestamp_ms < week_end).collect();
    let mut per_version: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for p in &in_week {
        let e = per_version.entry(&p.target.model_version).or_default();
        e.0 += 1;
        e.1 += usize::from(p.pass);
    }
    let pass_rates = per_version
        .into_iter()
        .map(|(v, (n, ok))| VersionPassRate { model_version: v.into(), probes: n, pass_rate: 100.0 * ok as f64 / n as f64 })
        .collect();
    let probed: BTreeSet<&str> = in_week.iter().map(|p| p.case_id.as_str()).collect();
    let coverage_gaps = trap_ids.iter().filter(|id| !probed.contains(id.as_str())).cloned().collect();
    let mut heatmap = Vec::new();
    for category in Category::ALL.into_iter().filter(|c| c.is_clinical()) {
        for metric in Metric::ALL.into_iter().filter(|m| m.is_percentage()) {
            let values: Vec<f64> =
                in_week.iter().filter(|p| p.category == category).map(|p| p.dots.value(metric)).collect();
            let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
            heatmap.push(HeatmapCell { category, metric, mean, samples: values.len() });
        }
    }
    let week_incidents: Vec<Incident> = incidents
        .iter()
        .filter(|i| i.detected_at >= week_start && i.detected_at < week_end)
        .cloned()
        .collect();
    WeeklyReport {
        week_start,
        week_end,
        probe_count: in_week.len(),
        pass_rates,
        regressions: week_incidents.iter().filter(|i| i.confirmed).cloned().collect(),
        coverage_gaps,
        heatmap,
        mttd: mttd_report(&week_incidents),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::MINUTE_MS;

    fn incident(id: u64, first: EpochMillis, detected: EpochMillis) -> Incident {
        Incident {
            id,
            model_version: "v1".into(),
            reason: "x".into(),
            first_failure_at: first,
            detected_at: detected,
            resolved_at: None,
            outcome: None,
            confirmed: false,
            blocked: false,
        }
    }

    #[test]
    fn mttd_examples() {
        let r = mttd_report(&[incident(1, 0, 40 * MINUTE_MS)]);
        assert_eq!(r.mean_ms, Some((40 * MINUTE_MS) as f64));
        let r = mttd_report(&[]);
        assert_eq!((r.count, r.mean_ms, r.median_ms), (0, None, None));
        let r = mttd_report(&[incident(1, 0, 20 * MINUTE_MS), incident(2, 0, 60 * MINUTE_MS)]);
        assert_eq!(r.mean_ms, Some((40 * MINUTE_MS) as f64));
    }

    #[test]
    fn weekly_heatmap_has_a_cell_per_category_and_metric() {
        let r = weekly_report(&[], &[], &["trap".into()], 0, 7);
        let categories = Category::ALL.into_iter().filter(|c| c.is_clinical()).count();
        let metrics = Metric::ALL.into_iter().filter(|m| m.is_percentage()).count();
        assert_eq!(r.heatmap.len(), categories * metrics);
        assert_eq!(r.coverage_gaps, ["trap"]);
        assert!(r.regressions.is_empty());
    }
}
