use core::fmt;

use serde::{Deserialize, Serialize};

/// Every numeric D.O.T.S. quantity that can be aggregated or compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    QuestionAccuracy,
    DiagnosisAccuracy,
    Icd10Accuracy,
    DifferentialAccuracy,
    DifferentialTop3,
    DifferentialTop5,
    TreatmentAccuracy,
    TreatmentWeightedScore,
    DiagnosticAccuracy,
    CriticalPassed,
    ConversationComplete,
    Steps,
}

impl Metric {
    pub const ALL: [Metric; 12] = [
        Metric::QuestionAccuracy,
        Metric::DiagnosisAccuracy,
        Metric::Icd10Accuracy,
        Metric::DifferentialAccuracy,
        Metric::DifferentialTop3,
        Metric::DifferentialTop5,
        Metric::TreatmentAccuracy,
        Metric::TreatmentWeightedScore,
        Metric::DiagnosticAccuracy,
        Metric::CriticalPassed,
        Metric::ConversationComplete,
        Metric::Steps,
    ];

    /// Metrics whose per-run value is either 0 or 100.
    pub fn is_binary(self) -> bool {
        matches!(
            self,
            Metric::DiagnosisAccuracy
                | Metric::Icd10Accuracy
                | Metric::DifferentialTop3
                | Metric::DifferentialTop5
                | Metric::CriticalPassed
                | Metric::ConversationComplete
        )
    }

    /// Metrics compared with McNemar's test in paired comparisons.
    pub fn uses_mcnemar(self) -> bool {
        matches!(
            self,
            Metric::DiagnosisAccuracy | Metric::CriticalPassed | Metric::ConversationComplete
        )
    }

    /// Percent-scaled metrics; `Steps` is a count.
    pub fn is_percentage(self) -> bool {
        self != Metric::Steps
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::QuestionAccuracy => "question_accuracy",
            Metric::DiagnosisAccuracy => "diagnosis_accuracy",
            Metric::Icd10Accuracy => "icd10_accuracy",
            Metric::DifferentialAccuracy => "differential_accuracy",
            Metric::DifferentialTop3 => "differential_top3",
            Metric::DifferentialTop5 => "differential_top5",
            Metric::TreatmentAccuracy => "treatment_accuracy",
            Metric::TreatmentWeightedScore => "treatment_weighted_score",
            Metric::DiagnosticAccuracy => "diagnostic_accuracy",
            Metric::CriticalPassed => "critical_passed",
            Metric::ConversationComplete => "conversation_complete",
            Metric::Steps => "steps",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
