use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Literal stored when an extracted item has no verbatim support.
pub const NO_EVIDENCE: &str = "no evidence";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisResult {
    pub predicted: String,
    pub correct: bool,
    pub evidence: String,
    /// Gold diagnosis text the prediction was matched to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_gold: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Icd10Result {
    pub predicted: String,
    pub correct: bool,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferentialResult {
    pub expected: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_predicted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question: String,
    pub asked: bool,
    pub evidence: String,
}

/// A treatment or investigation named in the final block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedItem {
    pub name: String,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TreatmentCounts {
    pub matching: u32,
    pub extra: u32,
    pub missing: u32,
    pub different: u32,
    /// Mandatory standard items that were prescribed.
    #[serde(default)]
    pub matching_items: Vec<String>,
    #[serde(default)]
    pub extra_items: Vec<String>,
    /// Mandatory standard items neither prescribed nor substituted.
    #[serde(default)]
    pub missing_items: Vec<String>,
    /// Prescribed agents substituted for a mandatory item.
    #[serde(default)]
    pub different_items: Vec<String>,
    /// Optional standard items that were prescribed; they count nowhere.
    #[serde(default)]
    pub optional_items: Vec<String>,
}

impl TreatmentCounts {
    /// Unexpected items for the weighted treatment score.
    pub fn unexpected(&self) -> u32 {
        self.extra + self.different
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorkupMatch {
    pub matched_mandatory: Vec<String>,
    pub matched_optional: Vec<String>,
    pub unexpected: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CriticalStatus {
    Ok,
    Violated,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalResult {
    pub condition: String,
    pub status: CriticalStatus,
    #[serde(default = "unit")]
    pub severity: f64,
}

fn unit() -> f64 {
    1.0
}

/// Evidence-anchored extraction of one transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub case_id: String,
    pub run_id: String,
    pub diagnoses_results: Vec<DiagnosisResult>,
    pub icd10_results: Vec<Icd10Result>,
    pub differential_results: Vec<DifferentialResult>,
    pub predicted_differential_ranked: Vec<String>,
    pub questions_asked: Vec<QuestionResult>,
    pub treatments: Vec<ExtractedItem>,
    pub investigations: Vec<ExtractedItem>,
    pub treatment_counts: TreatmentCounts,
    pub workup_match: WorkupMatch,
    pub critical_conditions: Vec<CriticalResult>,
    pub is_conversation_complete: bool,
}

impl ExtractionRecord {
    /// A record with nothing extracted.
    pub fn empty(case_id: &str, run_id: &str) -> Self {
        Self {
            case_id: case_id.into(),
            run_id: run_id.into(),
            diagnoses_results: Vec::new(),
            icd10_results: Vec::new(),
            differential_results: Vec::new(),
            predicted_differential_ranked: Vec::new(),
            questions_asked: Vec::new(),
            treatments: Vec::new(),
            investigations: Vec::new(),
            treatment_counts: TreatmentCounts::default(),
            workup_match: WorkupMatch::default(),
            critical_conditions: Vec::new(),
            is_conversation_complete: false,
        }
    }

    pub fn critical_statuses(&self) -> Vec<CriticalStatus> {
        self.critical_conditions.iter().map(|c| c.status).collect()
    }
}
