use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::record::*;
use crate::icd10::Icd10Code;
use crate::text::normalize;

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    SchemaVersion,
    EmptyId,
    Version,
    DuplicateTechnicalScope,
    NumSteps,
    MaxSteps,
    EmptyDiagnosis,
    EmptyIcd10,
    MalformedIcd10,
    WeightOutOfRange,
    WeightSum,
    DuplicateItem,
    MandatoryOptionalOverlap,
    NegativePenalty,
    ErrorTestMismatch,
    ErrorTestTolerance,
    EmptyTrigger,
    ArchetypeStatement,
    CategoryChanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub case_id: String,
    pub violations: Vec<Violation>,
    /// Conventions applied while checking, surfaced for reviewers.
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, code: ViolationCode, message: String) {
        self.violations.push(Violation { code, message });
    }
}

fn check_standard(report: &mut ValidationReport, label: &str, standard: &WeightedStandard) {
    let mut seen = BTreeSet::new();
    for item in &standard.mandatory {
        if !(item.weight > 0.0 && item.weight <= 100.0) {
            report.push(
                ViolationCode::WeightOutOfRange,
                format!("{label}: weight of {:?} is {} (must be in (0, 100])", item.name, item.weight),
            );
        }
        if !seen.insert(normalize(&item.name)) {
            report.push(ViolationCode::DuplicateItem, format!("{label}: duplicate mandatory item {:?}", item.name));
        }
    }
    for item in &standard.optional {
        if seen.contains(&normalize(&item.name)) {
            report.push(
                ViolationCode::MandatoryOptionalOverlap,
                format!("{label}: {:?} is both mandatory and optional", item.name),
            );
        }
    }
    let sum = standard.mandatory_weight_sum();
    if (sum - 100.0).abs() > WEIGHT_TOLERANCE {
        report.push(ViolationCode::WeightSum, format!("{label}: weights sum {sum} ≠ 100"));
    }
    if !(standard.unexpected_penalty >= 0.0) {
        report.push(
            ViolationCode::NegativePenalty,
            format!("{label}: unexpected_penalty {} is negative", standard.unexpected_penalty),
        );
    }
}

fn trigger_is_empty(trigger: &Trigger) -> bool {
    match trigger {
        Trigger::TreatmentAny { any_of } | Trigger::InvestigationAny { any_of } | Trigger::TreatmentAbsent { any_of } => {
            any_of.iter().all(|n| normalize(n).is_empty())
        }
        Trigger::All { triggers } | Trigger::Any { triggers } => triggers.is_empty() || triggers.iter().any(trigger_is_empty),
    }
}

/// Checks every case invariant. Violations are returned as data.
pub fn validate_case(case: &CaseRecord) -> ValidationReport {
    let mut report = ValidationReport {
        case_id: case.id.clone(),
        violations: Vec::new(),
        notes: alloc::vec![String::from("mandatory weights must sum to exactly 100 per standard")],
    };

    if case.schema_version != CASE_SCHEMA_VERSION {
        report.push(
            ViolationCode::SchemaVersion,
            format!("schema_version {} unsupported (expected {CASE_SCHEMA_VERSION})", case.schema_version),
        );
    }
    if case.id.trim().is_empty() {
        report.push(ViolationCode::EmptyId, String::from("case id is empty"));
    }
    if case.version == 0 {
        report.push(ViolationCode::Version, String::from("version must be ≥ 1"));
    }
    let technical = case.scopes.iter().filter(|s| s.eq_ignore_ascii_case(TECHNICAL_SCOPE)).count();
    if technical > 1 {
        report.push(ViolationCode::DuplicateTechnicalScope, String::from("duplicate Technical scope"));
    }
    if case.num_steps == 0 {
        report.push(ViolationCode::NumSteps, String::from("num_steps must be ≥ 1"));
    }
    if case.max_steps == Some(0) {
        report.push(ViolationCode::MaxSteps, String::from("max_steps override must be ≥ 1"));
    }
    if case.diagnosis.texts.iter().all(|t| t.trim().is_empty()) {
        report.push(ViolationCode::EmptyDiagnosis, String::from("diagnosis texts are empty"));
    }
    if case.diagnosis.icd10.is_empty() {
        report.push(ViolationCode::EmptyIcd10, String::from("icd10 code list is empty"));
    }
    for code in &case.diagnosis.icd10 {
        if Icd10Code::parse(code).is_err() {
            report.push(ViolationCode::MalformedIcd10, format!("malformed ICD-10 code {code:?}"));
        }
    }
    check_standard(&mut report, "diagnostic_workup", &case.diagnostic_workup);
    check_standard(&mut report, "default_treatments", case.treatment_standard());
    for condition in case.critical_conditions() {
        if trigger_is_empty(&condition.trigger) {
            report.push(
                ViolationCode::EmptyTrigger,
                format!("critical condition {:?} has an empty trigger", condition.description),
            );
        }
    }

    let is_error_category = case.category == Category::ErrorTests;
    match (&case.error_test_spec, is_error_category) {
        (Some(_), false) => report.push(
            ViolationCode::ErrorTestMismatch,
            String::from("error_test_spec present outside the ErrorTests category"),
        ),
        (None, true) => report.push(
            ViolationCode::ErrorTestMismatch,
            String::from("ErrorTests case lacks error_test_spec"),
        ),
        (Some(spec), true) => {
            if !(spec.tolerance >= 0.0) {
                report.push(ViolationCode::ErrorTestTolerance, format!("tolerance {} is negative", spec.tolerance));
            }
        }
        (None, false) => {}
    }

    let needs_statement = matches!(
        case.patient_archetype.style,
        ArchetypeStyle::Insistent | ArchetypeStyle::Denier | ArchetypeStyle::Returner
    );
    if needs_statement && case.patient_archetype.statement.as_deref().is_none_or(|s| s.trim().is_empty()) {
        report.push(
            ViolationCode::ArchetypeStatement,
            format!("archetype {:?} requires a statement", case.patient_archetype.style),
        );
    }

    report
}

/// Checks that `next` may replace `previous` in a bank: the category is
/// inherited and the version strictly increases.
pub fn validate_successor(previous: &CaseRecord, next: &CaseRecord) -> ValidationReport {
    let mut report = validate_case(next);
    if previous.category != next.category {
        report.push(
            ViolationCode::CategoryChanged,
            format!("category changed from {} to {}", previous.category, next.category),
        );
    }
    if next.version <= previous.version {
        report.push(
            ViolationCode::Version,
            format!("version {} does not exceed {}", next.version, previous.version),
        );
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::sample_case;
    use alloc::string::ToString;
    use alloc::vec;

    fn codes(report: &ValidationReport) -> Vec<ViolationCode> {
        report.violations.iter().map(|v| v.code).collect()
    }

    #[test]
    fn sample_case_is_valid() {
        let report = validate_case(&sample_case());
        assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn duplicate_technical_scope() {
        let mut case = sample_case();
        case.scopes = vec!["Technical".into(), "Cardiology".into(), "technical".into()];
        let report = validate_case(&case);
        assert_eq!(codes(&report), vec![ViolationCode::DuplicateTechnicalScope]);
        assert_eq!(report.violations[0].message, "duplicate Technical scope");
    }

    #[test]
    fn weights_sixty_forty_are_valid_and_eighty_thirty_are_not() {
        let mut case = sample_case();
        case.diagnostic_workup.mandatory[0].weight = 60.0;
        case.diagnostic_workup.mandatory[1].weight = 40.0;
        assert!(validate_case(&case).is_valid());

        case.diagnostic_workup.mandatory[0].weight = 80.0;
        case.diagnostic_workup.mandatory[1].weight = 30.0;
        let report = validate_case(&case);
        assert_eq!(codes(&report), vec![ViolationCode::WeightSum]);
        assert!(report.violations[0].message.contains("weights sum 110 ≠ 100"));
    }

    #[test]
    fn structural_invariants() {
        let mut case = sample_case();
        case.num_steps = 0;
        case.diagnosis.icd10 = vec!["banana".into()];
        case.diagnosis.texts.clear();
        let c = codes(&validate_case(&case));
        assert!(c.contains(&ViolationCode::NumSteps));
        assert!(c.contains(&ViolationCode::MalformedIcd10));
        assert!(c.contains(&ViolationCode::EmptyDiagnosis));

        let mut case = sample_case();
        case.diagnosis.icd10.clear();
        assert_eq!(codes(&validate_case(&case)), vec![ViolationCode::EmptyIcd10]);
    }

    #[test]
    fn error_spec_iff_error_category() {
        let mut case = sample_case();
        case.category = Category::ErrorTests;
        assert_eq!(codes(&validate_case(&case)), vec![ViolationCode::ErrorTestMismatch]);
    }

    #[test]
    fn overlap_and_duplicates() {
        let mut case = sample_case();
        case.diagnostic_workup.optional.push(OptionalItem { name: "Urinalysis".into(), aliases: vec![] });
        case.diagnostic_workup.mandatory.push(MandatoryItem { name: "urine culture".into(), weight: 0.5, aliases: vec![] });
        let c = codes(&validate_case(&case));
        assert!(c.contains(&ViolationCode::MandatoryOptionalOverlap));
        assert!(c.contains(&ViolationCode::DuplicateItem));
        assert!(c.contains(&ViolationCode::WeightSum));
    }

    #[test]
    fn validation_is_idempotent_and_pure() {
        let mut case = sample_case();
        case.scopes = vec!["Technical".into(), "Technical".into()];
        let before = case.clone();
        let a = validate_case(&case);
        let b = validate_case(&case);
        assert_eq!(a, b);
        assert_eq!(case, before);
    }

    #[test]
    fn successor_inherits_category() {
        let prev = sample_case();
        let mut next = prev.clone();
        next.version = 2;
        assert!(validate_successor(&prev, &next).is_valid());
        next.category = Category::Surgery;
        next.version = 1;
        let c = codes(&validate_successor(&prev, &next));
        assert!(c.contains(&ViolationCode::CategoryChanged));
        assert!(c.contains(&ViolationCode::Version));
        let _ = "x".to_string();
    }
}
