//! Batch aggregation and paired run comparison.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::case::{CaseRecord, Category};
use crate::clock::EpochMillis;
use crate::metric::Metric;
use crate::scoring::{step_flag, DotsRecord};
use crate::stats::{mcnemar, mean_effect_ci, wilcoxon_signed_rank, EffectCi, McNemarResult, WilcoxonResult, DEFAULT_RESAMPLES};

/// A binary metric counts as a success at or above this case-level value.
pub const BINARY_SUCCESS_AT: f64 = 50.0;

const DELTA_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("batch contains no clinical case runs")]
    EmptyBatch,
    #[error("the two runs share no case")]
    EmptyIntersection,
}

/// One scored run of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRun {
    pub case_id: String,
    pub run_id: String,
    pub category: Category,
    pub expected_steps: u32,
    #[serde(default)]
    pub technical: bool,
    pub dots: DotsRecord,
}

impl CaseRun {
    pub fn new(case: &CaseRecord, run_id: &str, dots: DotsRecord) -> Self {
        Self {
            case_id: case.id.clone(),
            run_id: run_id.into(),
            category: case.category,
            expected_steps: case.num_steps,
            technical: case.is_technical(),
            dots,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub batch_id: String,
    pub model_version: String,
    pub seed: u64,
    pub started_at: EpochMillis,
    pub finished_at: EpochMillis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
}

/// Per-case means over its runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub category: Category,
    pub runs: usize,
    pub run_ids: Vec<String>,
    pub means: BTreeMap<Metric, f64>,
    pub d_pass_rate: f64,
    pub total_steps: u64,
    pub mean_steps: f64,
    pub expected_steps: u32,
    pub step_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub cases: usize,
    pub means: BTreeMap<Metric, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub manifest: RunManifest,
    /// Mean over cases of case-level values.
    pub averages: BTreeMap<Metric, f64>,
    pub per_category: BTreeMap<Category, CategorySummary>,
    /// Unweighted mean of category means.
    pub balanced: BTreeMap<Metric, f64>,
    pub case_count: usize,
    pub run_count: usize,
    pub total_steps: u64,
    pub average_steps: f64,
    pub outside_band_count: usize,
    pub cases: Vec<CaseSummary>,
    /// Runs left out of clinical aggregates (ErrorTests or Technical).
    pub excluded: Vec<String>,
}

impl BatchReport {
    pub fn case(&self, case_id: &str) -> Option<&CaseSummary> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 { 0.0 } else { sum / n as f64 }
}

/// Aggregates scored runs: case means, flat averages, category means,
/// category-balanced averages and step statistics.
pub fn aggregate_batch(runs: &[CaseRun], manifest: RunManifest) -> Result<BatchReport, AggregateError> {
    let mut excluded = Vec::new();
    let mut by_case: BTreeMap<&str, Vec<&CaseRun>> = BTreeMap::new();
    for run in runs {
        if run.technical || !run.category.is_clinical() {
            excluded.push(run.run_id.clone());
        } else {
            by_case.entry(run.case_id.as_str()).or_default().push(run);
        }
    }
    if by_case.is_empty() {
        return Err(AggregateError::EmptyBatch);
    }
    let cases: Vec<CaseSummary> = by_case
        .into_iter()
        .map(|(case_id, runs)| {
            let means = Metric::ALL.iter().map(|&m| (m, mean(runs.iter().map(|r| r.dots.value(m))))).collect();
            let total_steps: u64 = runs.iter().map(|r| r.dots.steps as u64).sum();
            let mean_steps = total_steps as f64 / runs.len() as f64;
            let expected = runs[0].expected_steps;
            CaseSummary {
                case_id: case_id.into(),
                category: runs[0].category,
                runs: runs.len(),
                run_ids: runs.iter().map(|r| r.run_id.clone()).collect(),
                means,
                d_pass_rate: mean(runs.iter().map(|r| if r.dots.d_pass { 100.0 } else { 0.0 })),
                total_steps,
                mean_steps,
                expected_steps: expected,
                step_flag: step_flag(mean_steps, expected),
            }
        })
        .collect();

    let averages = Metric::ALL.iter().map(|&m| (m, mean(cases.iter().map(|c| c.means[&m])))).collect();
    let mut per_category: BTreeMap<Category, CategorySummary> = BTreeMap::new();
    for category in Category::ALL {
        let members: Vec<&CaseSummary> = cases.iter().filter(|c| c.category == category).collect();
        if members.is_empty() {
            continue;
        }
        let means = Metric::ALL.iter().map(|&m| (m, mean(members.iter().map(|c| c.means[&m])))).collect();
        per_category.insert(category, CategorySummary { cases: members.len(), means });
    }
    let balanced = Metric::ALL
        .iter()
        .map(|&m| (m, mean(per_category.values().map(|s| s.means[&m]))))
        .collect();
    let run_count: usize = cases.iter().map(|c| c.runs).sum();
    let total_steps: u64 = cases.iter().map(|c| c.total_steps).sum();
    Ok(BatchReport {
        manifest,
        averages,
        per_category,
        balanced,
        case_count: cases.len(),
        run_count,
        total_steps,
        average_steps: total_steps as f64 / run_count.max(1) as f64,
        outside_band_count: cases.iter().filter(|c| c.step_flag).count(),
        cases,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDelta {
    pub case_id: String,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: u64,
}

/// Fixed-width histogram over `[-100, 100]`; values outside fall into the
/// edge bins and 100 lands in the last bin.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    let bins = libm::ceil(200.0 / width) as usize;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            bin_low: -100.0 + i as f64 * width,
            bin_high: (-100.0 + (i + 1) as f64 * width).min(100.0),
            count: 0,
        })
        .collect();
    for &v in values {
        let idx = libm::floor((v + 100.0) / width);
        let idx = if idx < 0.0 { 0 } else { (idx as usize).min(bins - 1) };
        out[idx].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub improved: usize,
    pub unchanged: usize,
    pub worsened: usize,
    pub improved_pct: f64,
    pub unchanged_pct: f64,
    pub worsened_pct: f64,
}

impl Proportions {
    pub fn from_deltas(deltas: &[f64]) -> Self {
        let improved = deltas.iter().filter(|d| **d > DELTA_EPSILON).count();
        let worsened = deltas.iter().filter(|d| **d < -DELTA_EPSILON).count();
        let unchanged = deltas.len() - improved - worsened;
        let pct = |k: usize| if deltas.is_empty() { 0.0 } else { k as f64 / deltas.len() as f64 * 100.0 };
        Self {
            improved,
            unchanged,
            worsened,
            improved_pct: pct(improved),
            unchanged_pct: pct(unchanged),
            worsened_pct: pct(worsened),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: Metric,
    pub deltas: Vec<CaseDelta>,
    pub proportions: Proportions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wilcoxon: Option<WilcoxonResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcnemar: Option<McNemarResult>,
    /// Absent when fewer than two cases are shared.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect: Option<EffectCi>,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub run_a: String,
    pub run_b: String,
    pub cases: Vec<String>,
    pub metrics: BTreeMap<Metric, MetricComparison>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
    pub bin_width: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { level: 0.95, resamples: DEFAULT_RESAMPLES, seed: 0, bin_width: 10.0 }
    }
}

/// Compares two batches case by case; deltas are `b - a`.
pub fn paired_compare(a: &BatchReport, b: &BatchReport, options: &CompareOptions) -> Result<PairedComparison, AggregateError> {
    let pairs: Vec<(&CaseSummary, &CaseSummary)> =
        a.cases.iter().filter_map(|ca| b.case(&ca.case_id).map(|cb| (ca, cb))).collect();
    if pairs.is_empty() {
        return Err(AggregateError::EmptyIntersection);
    }
    let mut metrics = BTreeMap::new();
    for metric in Metric::ALL {
        let deltas: Vec<CaseDelta> = pairs
            .iter()
            .map(|(ca, cb)| CaseDelta { case_id: ca.case_id.clone(), delta: cb.means[&metric] - ca.means[&metric] })
            .collect();
        let values: Vec<f64> = deltas.iter().map(|d| d.delta).collect();
        let (wilcoxon, mcnemar_result) = if metric.uses_mcnemar() {
            let success = |v: f64| v >= BINARY_SUCCESS_AT;
            let mut improved = 0;
            let mut worsened = 0;
            for (ca, cb) in &pairs {
                match (success(ca.means[&metric]), success(cb.means[&metric])) {
                    (false, true) => improved += 1,
                    (true, false) => worsened += 1,
                    _ => {}
                }
            }
            (None, Some(mcnemar(improved, worsened)))
        } else {
            (wilcoxon_signed_rank(&values).ok(), None)
        };
        metrics.insert(
            metric,
            MetricComparison {
                metric,
                proportions: Proportions::from_deltas(&values),
                wilcoxon,
                mcnemar: mcnemar_result,
                effect: mean_effect_ci(&values, options.level, options.resamples, options.seed).ok(),
                histogram: histogram(&values, options.bin_width),
                deltas,
            },
        );
    }
    Ok(PairedComparison {
        run_a: a.manifest.batch_id.clone(),
        run_b: b.manifest.batch_id.clone(),
        cases: pairs.iter().map(|(c, _)| c.case_id.clone()).collect(),
        metrics,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::scoring::DotsDetails;
    use alloc::format;
    use alloc::vec;

    pub(crate) fn dots(value: f64, steps: u32) -> DotsRecord {
        DotsRecord {
            question_accuracy: value,
            diagnosis_accuracy: value,
            icd10_accuracy: value,
            d_pass: value > 0.0,
            differential_accuracy: value,
            differential_top3: value,
            differential_top5: value,
            treatment_accuracy: value,
            treatment_weighted_score: value,
            diagnostic_accuracy: value,
            critical_passed: value,
            conversation_complete: value,
            steps,
            step_flag: false,
            critical_flag: false,
            details: DotsDetails::default(),
        }
    }

    pub(crate) fn run(case: &str, category: Category, value: f64, steps: u32) -> CaseRun {
        CaseRun {
            case_id: case.into(),
            run_id: format!("{case}-{steps}-{value}"),
            category,
            expected_steps: 10,
            technical: false,
            dots: dots(value, steps),
        }
    }

    #[test]
    fn flat_versus_balanced() {
        let runs = vec![
            run("a", Category::InternalMedicine, 100.0, 10),
            run("b", Category::InternalMedicine, 100.0, 10),
            run("c", Category::InternalMedicine, 100.0, 10),
            run("d", Category::Surgery, 0.0, 10),
        ];
        let r = aggregate_batch(&runs, RunManifest::default()).unwrap();
        assert_eq!(r.averages[&Metric::DiagnosisAccuracy], 75.0);
        assert_eq!(r.balanced[&Metric::DiagnosisAccuracy], 50.0);

        let equal = vec![run("a", Category::InternalMedicine, 80.0, 10), run("b", Category::Surgery, 90.0, 10)];
        let r = aggregate_batch(&equal, RunManifest::default()).unwrap();
        assert_eq!(r.averages[&Metric::DiagnosisAccuracy], 85.0);
        assert_eq!(r.balanced[&Metric::DiagnosisAccuracy], 85.0);
    }

    #[test]
    fn steps_and_exclusions() {
        let mut runs: Vec<CaseRun> = (0..33).map(|i| run(&format!("c{i}"), Category::Pediatrics, 50.0, if i < 11 { 11 } else { 10 })).collect();
        let mut error_case = run("err", Category::ErrorTests, 0.0, 99);
        error_case.run_id = "err-run".into();
        runs.push(error_case);
        let r = aggregate_batch(&runs, RunManifest::default()).unwrap();
        assert_eq!(r.total_steps, 341);
        assert!((r.average_steps - 10.33).abs() < 0.005);
        assert_eq!(r.excluded, vec![String::from("err-run")]);
        assert_eq!(aggregate_batch(&[], RunManifest::default()), Err(AggregateError::EmptyBatch));
    }

    #[test]
    fn multi_run_case_means() {
        let runs = vec![run("a", Category::Surgery, 100.0, 8), run("a", Category::Surgery, 0.0, 14)];
        let r = aggregate_batch(&runs, RunManifest::default()).unwrap();
        assert_eq!(r.case_count, 1);
        assert_eq!(r.cases[0].means[&Metric::DiagnosisAccuracy], 50.0);
        assert_eq!(r.cases[0].mean_steps, 11.0);
        assert_eq!(r.average_steps, 11.0);
        assert!(!r.cases[0].step_flag);
    }

    #[test]
    fn identical_runs_compare_flat() {
        let runs = vec![run("a", Category::Surgery, 60.0, 8), run("b", Category::Surgery, 40.0, 9)];
        let r = aggregate_batch(&runs, RunManifest::default()).unwrap();
        let c = paired_compare(&r, &r, &CompareOptions { resamples: 200, ..Default::default() }).unwrap();
        for m in c.metrics.values() {
            assert_eq!(m.proportions.unchanged_pct, 100.0);
            let p = m.wilcoxon.as_ref().map(|w| w.p_two_sided).or(m.mcnemar.as_ref().map(|x| x.p_exact));
            assert_eq!(p, Some(1.0));
        }
    }

    #[test]
    fn disjoint_runs_are_rejected() {
        let a = aggregate_batch(&[run("a", Category::Surgery, 1.0, 1)], RunManifest::default()).unwrap();
        let b = aggregate_batch(&[run("b", Category::Surgery, 1.0, 1)], RunManifest::default()).unwrap();
        assert_eq!(paired_compare(&a, &b, &CompareOptions::default()), Err(AggregateError::EmptyIntersection));
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[-100.0, -95.0, 0.0, 99.9, 100.0, 250.0], 10.0);
        assert_eq!(h.len(), 20);
        assert_eq!(h[0].count, 2);
        assert_eq!(h[10].count, 1);
        assert_eq!(h[19].count, 3);
        assert_eq!((h[19].bin_low, h[19].bin_high), (90.0, 100.0));
    }
}
