//! Deterministic D.O.T.S. metric computation.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::case::{CaseRecord, WeightedStandard};
use crate::evaluator::{
    CriticalStatus, DiagnosisResult, DifferentialResult, ExtractionRecord, Icd10Result, QuestionResult,
};
use crate::metric::Metric;
use crate::text::{deterministic_match, normalize};

/// Relative deviation from the expected step count tolerated before the
/// step red flag is raised. Both band edges are inside.
pub const DEFAULT_STEP_BAND: f64 = 0.25;

fn percent(numerator: usize, denominator: usize) -> f64 {
    numerator as f64 / denominator as f64 * 100.0
}

/// Share of control questions asked; an empty list scores 100.
pub fn question_accuracy(questions: &[QuestionResult]) -> f64 {
    if questions.is_empty() {
        return 100.0;
    }
    percent(questions.iter().filter(|q| q.asked).count(), questions.len())
}

pub fn diagnosis_accuracy(results: &[DiagnosisResult]) -> f64 {
    if results.iter().any(|r| r.correct) { 100.0 } else { 0.0 }
}

/// Binary code accuracy: any correct code scores 100.
pub fn icd10_accuracy(results: &[Icd10Result]) -> f64 {
    if results.iter().any(|r| r.correct) { 100.0 } else { 0.0 }
}

/// Graded form `min(100, correct / predicted × 100)`, kept as a detail.
pub fn icd10_ratio(results: &[Icd10Result]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    percent(results.iter().filter(|r| r.correct).count(), results.len()).min(100.0)
}

/// Share of expected differential items covered; none expected scores 100.
pub fn differential_accuracy(results: &[DifferentialResult]) -> f64 {
    if results.is_empty() {
        return 100.0;
    }
    percent(results.iter().filter(|r| r.correct).count(), results.len())
}

/// 100 when any accepted primary-diagnosis text appears within the first `k`
/// predictions.
pub fn differential_topk<S: AsRef<str>>(predicted_ranked: &[S], accepted: &[String], k: usize) -> f64 {
    let hit = predicted_ranked
        .iter()
        .take(k)
        .any(|p| deterministic_match(p.as_ref(), accepted.iter().map(String::as_str)));
    if hit { 100.0 } else { 0.0 }
}

pub fn treatment_accuracy(matching: u32, extra: u32, missing: u32, different: u32) -> f64 {
    let total = matching as u64 + extra as u64 + missing as u64 + different as u64;
    if total == 0 {
        return 100.0;
    }
    matching as f64 / total as f64 * 100.0
}

/// Sum of the weights of matched mandatory items minus the fixed penalty per
/// unexpected item, clamped to [0, 100]. Optional matches add nothing.
pub fn weighted_standard_score<S: AsRef<str>>(
    standard: &WeightedStandard,
    matched_mandatory: &[S],
    _matched_optional: usize,
    unexpected_count: usize,
) -> f64 {
    let mut counted: Vec<String> = Vec::new();
    let mut earned = 0.0;
    for name in matched_mandatory {
        let key = normalize(name.as_ref());
        if counted.contains(&key) {
            continue;
        }
        if let Some(item) = standard.mandatory.iter().find(|m| normalize(&m.name) == key) {
            earned += item.weight;
            counted.push(key);
        }
    }
    (earned - standard.unexpected_penalty * unexpected_count as f64).clamp(0.0, 100.0)
}

/// Any violated critical condition zeroes the score and raises the flag.
pub fn apply_critical_override(score: f64, statuses: &[CriticalStatus]) -> (f64, bool) {
    if statuses.contains(&CriticalStatus::Violated) { (0.0, true) } else { (score, false) }
}

pub fn critical_passed_run(statuses: &[CriticalStatus]) -> f64 {
    if statuses.iter().all(|s| matches!(s, CriticalStatus::Ok | CriticalStatus::NotApplicable)) {
        100.0
    } else {
        0.0
    }
}

/// Red flag for mean step counts outside `[(1-band)·expected, (1+band)·expected]`.
pub fn step_flag_with(mean_steps: f64, expected: u32, band: f64) -> bool {
    let expected = expected as f64;
    mean_steps < (1.0 - band) * expected || mean_steps > (1.0 + band) * expected
}

pub fn step_flag(mean_steps: f64, expected: u32) -> bool {
    step_flag_with(mean_steps, expected, DEFAULT_STEP_BAND)
}

/// Supporting values reported next to the headline metrics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DotsDetails {
    /// Graded ICD-10 ratio.
    pub icd10_ratio: f64,
    /// Treatment score before the critical-condition override.
    pub treatment_weighted_raw: f64,
    /// Sum of severities of violated critical conditions.
    pub severity_weighted_violations: f64,
    /// Metrics that scored 100 only because their input list was empty.
    pub vacuous: Vec<Metric>,
}

/// Per-run metric vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotsRecord {
    pub question_accuracy: f64,
    pub diagnosis_accuracy: f64,
    pub icd10_accuracy: f64,
    pub d_pass: bool,
    pub differential_accuracy: f64,
    pub differential_top3: f64,
    pub differential_top5: f64,
    pub treatment_accuracy: f64,
    pub treatment_weighted_score: f64,
    pub diagnostic_accuracy: f64,
    pub critical_passed: f64,
    pub conversation_complete: f64,
    pub steps: u32,
    pub step_flag: bool,
    /// Set when a critical condition was violated.
    pub critical_flag: bool,
    #[serde(default)]
    pub details: DotsDetails,
}

impl DotsRecord {
    /// Every metric at zero, for runs that failed before they could be scored.
    pub fn zeroed() -> Self {
        Self {
            question_accuracy: 0.0,
            diagnosis_accuracy: 0.0,
            icd10_accuracy: 0.0,
            d_pass: false,
            differential_accuracy: 0.0,
            differential_top3: 0.0,
            differential_top5: 0.0,
            treatment_accuracy: 0.0,
            treatment_weighted_score: 0.0,
            diagnostic_accuracy: 0.0,
            critical_passed: 0.0,
            conversation_complete: 0.0,
            steps: 0,
            step_flag: false,
            critical_flag: false,
            details: DotsDetails::default(),
        }
    }

    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::QuestionAccuracy => self.question_accuracy,
            Metric::DiagnosisAccuracy => self.diagnosis_accuracy,
            Metric::Icd10Accuracy => self.icd10_accuracy,
            Metric::DifferentialAccuracy => self.differential_accuracy,
            Metric::DifferentialTop3 => self.differential_top3,
            Metric::DifferentialTop5 => self.differential_top5,
            Metric::TreatmentAccuracy => self.treatment_accuracy,
            Metric::TreatmentWeightedScore => self.treatment_weighted_score,
            Metric::DiagnosticAccuracy => self.diagnostic_accuracy,
            Metric::CriticalPassed => self.critical_passed,
            Metric::ConversationComplete => self.conversation_complete,
            Metric::Steps => self.steps as f64,
        }
    }
}

/// Computes every metric of one run.
pub fn assemble_dots(extraction: &ExtractionRecord, case: &CaseRecord, steps: u32) -> DotsRecord {
    let statuses = extraction.critical_statuses();
    let counts = &extraction.treatment_counts;
    let diagnosis = diagnosis_accuracy(&extraction.diagnoses_results);
    let icd10 = icd10_accuracy(&extraction.icd10_results);
    let accepted: Vec<String> =
        case.diagnosis.texts.iter().chain(case.additional_answers.iter()).cloned().collect();
    let treatment_raw = weighted_standard_score(
        case.treatment_standard(),
        &counts.matching_items,
        counts.optional_items.len(),
        counts.unexpected() as usize,
    );
    let (treatment_weighted, critical_flag) = apply_critical_override(treatment_raw, &statuses);
    let workup = &extraction.workup_match;

    let mut vacuous = Vec::new();
    if extraction.questions_asked.is_empty() {
        vacuous.push(Metric::QuestionAccuracy);
    }
    if extraction.differential_results.is_empty() {
        vacuous.push(Metric::DifferentialAccuracy);
    }
    if counts.matching + counts.extra + counts.missing + counts.different == 0 {
        vacuous.push(Metric::TreatmentAccuracy);
    }
    if statuses.is_empty() {
        vacuous.push(Metric::CriticalPassed);
    }
    let severity_weighted_violations = extraction
        .critical_conditions
        .iter()
        .filter(|c| c.status == CriticalStatus::Violated)
        .map(|c| c.severity)
        .fold(0.0, |a, s| a + s);

    DotsRecord {
        question_accuracy: question_accuracy(&extraction.questions_asked),
        diagnosis_accuracy: diagnosis,
        icd10_accuracy: icd10,
        d_pass: diagnosis > 0.0 || icd10 > 0.0,
        differential_accuracy: differential_accuracy(&extraction.differential_results),
        differential_top3: differential_topk(&extraction.predicted_differential_ranked, &accepted, 3),
        differential_top5: differential_topk(&extraction.predicted_differential_ranked, &accepted, 5),
        treatment_accuracy: treatment_accuracy(counts.matching, counts.extra, counts.missing, counts.different),
        treatment_weighted_score: treatment_weighted,
        diagnostic_accuracy: weighted_standard_score(
            &case.diagnostic_workup,
            &workup.matched_mandatory,
            workup.matched_optional.len(),
            workup.unexpected.len(),
        ),
        critical_passed: critical_passed_run(&statuses),
        conversation_complete: if extraction.is_conversation_complete { 100.0 } else { 0.0 },
        steps,
        step_flag: step_flag(steps as f64, case.num_steps),
        critical_flag,
        details: DotsDetails {
            icd10_ratio: icd10_ratio(&extraction.icd10_results),
            treatment_weighted_raw: treatment_raw,
            severity_weighted_violations,
            vacuous,
        },
    }
}
