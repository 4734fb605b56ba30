use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::metric::Metric;

/// Current case-file schema version.
pub const CASE_SCHEMA_VERSION: u32 = 1;

/// Default points deducted per unexpected recommendation.
pub const DEFAULT_UNEXPECTED_PENALTY: f64 = 5.0;

/// Scope tag marking cases that are never executed.
pub const TECHNICAL_SCOPE: &str = "Technical";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    InternalMedicine,
    Pediatrics,
    Surgery,
    Oncology,
    ObGyn,
    Psychiatry,
    EmergencyMedicine,
    ErrorTests,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::InternalMedicine,
        Category::Pediatrics,
        Category::Surgery,
        Category::Oncology,
        Category::ObGyn,
        Category::Psychiatry,
        Category::EmergencyMedicine,
        Category::ErrorTests,
    ];

    /// Clinical categories take part in Level-2 sampling and aggregates.
    pub fn is_clinical(self) -> bool {
        self != Category::ErrorTests
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::InternalMedicine => "InternalMedicine",
            Category::Pediatrics => "Pediatrics",
            Category::Surgery => "Surgery",
            Category::Oncology => "Oncology",
            Category::ObGyn => "ObGyn",
            Category::Psychiatry => "Psychiatry",
            Category::EmergencyMedicine => "EmergencyMedicine",
            Category::ErrorTests => "ErrorTests",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Basic,
    Intermediate,
    Advanced,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tags {
    #[serde(default)]
    pub sex: Sex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub other: Vec<String>,
}

impl Tags {
    pub fn has(&self, tag: &str) -> bool {
        self.other.iter().any(|t| t.eq_ignore_ascii_case(tag))
    }
}

/// One revealable fact. The patient discloses `answer` only when the doctor's
/// question mentions the topic or one of the keywords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fact {
    pub topic: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keywords: Vec<String>,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttachmentKind {
    LabReport,
    MedicalReport,
    PatientDiary,
    DevicePhoto,
    BodyPhoto,
}

impl AttachmentKind {
    /// Words that, when present in a doctor message, request this kind.
    pub fn request_words(self) -> &'static [&'static str] {
        match self {
            AttachmentKind::LabReport => &["lab", "labs", "laboratory", "blood test", "test results"],
            AttachmentKind::MedicalReport => &["report", "discharge", "records", "summary"],
            AttachmentKind::PatientDiary => &["diary", "log", "journal"],
            AttachmentKind::DevicePhoto => &["device", "reading", "monitor"],
            AttachmentKind::BodyPhoto => &["photo", "picture", "image"],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AttachmentKind::LabReport => "lab report",
            AttachmentKind::MedicalReport => "medical report",
            AttachmentKind::PatientDiary => "patient diary",
            AttachmentKind::DevicePhoto => "device photo",
            AttachmentKind::BodyPhoto => "body photo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RevealPolicy {
    AtIntro,
    OnRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attachment {
    pub kind: AttachmentKind,
    pub name: String,
    pub content_ref: String,
    pub reveal: RevealPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosisStandard {
    pub texts: Vec<String>,
    pub icd10: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MandatoryItem {
    pub name: String,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionalItem {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

fn default_penalty() -> f64 {
    DEFAULT_UNEXPECTED_PENALTY
}

/// Mandatory items carry weights summing to 100, optional items weigh zero,
/// and every unexpected item costs a fixed penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedStandard {
    pub mandatory: Vec<MandatoryItem>,
    #[serde(default)]
    pub optional: Vec<OptionalItem>,
    #[serde(default = "default_penalty")]
    pub unexpected_penalty: f64,
}

impl WeightedStandard {
    pub fn mandatory_weight_sum(&self) -> f64 {
        self.mandatory.iter().map(|m| m.weight).fold(0.0, |a, w| a + w)
    }

    pub fn weight_of(&self, name: &str) -> Option<f64> {
        self.mandatory.iter().find(|m| m.name == name).map(|m| m.weight)
    }
}

/// Declarative predicate over the extracted final recommendations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trigger {
    /// Fires when any recommended treatment mentions one of the names.
    TreatmentAny { any_of: Vec<String> },
    /// Fires when any recommended investigation mentions one of the names.
    InvestigationAny { any_of: Vec<String> },
    /// Fires when none of the names appears among recommended treatments.
    TreatmentAbsent { any_of: Vec<String> },
    /// Fires when every inner trigger fires.
    All { triggers: Vec<Trigger> },
    /// Fires when at least one inner trigger fires.
    Any { triggers: Vec<Trigger> },
}

/// Case context in which a critical condition can be evaluated at all.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Applicability {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub age_groups: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requires_tags: Vec<String>,
}

impl Applicability {
    pub fn admits(&self, tags: &Tags) -> bool {
        if let Some(sex) = self.sex {
            if tags.sex != sex {
                return false;
            }
        }
        if !self.age_groups.is_empty() {
            match &tags.age_group {
                Some(g) if self.age_groups.iter().any(|a| a == g) => {}
                _ => return false,
            }
        }
        self.requires_tags.iter().all(|t| tags.has(t))
    }
}

fn default_severity() -> f64 {
    1.0
}

fn is_unit_severity(v: &f64) -> bool {
    *v == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalCondition {
    pub description: String,
    pub trigger: Trigger,
    #[serde(default, skip_serializing_if = "is_default_applicability")]
    pub applies_to: Applicability,
    /// Weight of a violation in severity-weighted safety summaries.
    #[serde(default = "default_severity", skip_serializing_if = "is_unit_severity")]
    pub severity: f64,
}

fn is_default_applicability(a: &Applicability) -> bool {
    *a == Applicability::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentStandard {
    pub standard: WeightedStandard,
    #[serde(default)]
    pub critical_conditions: Vec<CriticalCondition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchetypeStyle {
    #[default]
    Neutral,
    OverSharer,
    Insistent,
    Denier,
    Questioner,
    Returner,
}

/// Behavioral style of the simulated patient. `statement` is the insisted
/// claim, denial phrasing, clarifying question or forgotten fact depending on
/// the style; `triggers` restricts where it applies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientArchetype {
    pub style: ArchetypeStyle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statement: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triggers: Vec<String>,
}

/// A complicated variant layered on top of a base case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexVariant {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intro: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_facts: Vec<Fact>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_attachments: Vec<Attachment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
}

/// Corrupted-gold meta-evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorTestSpec {
    pub corruption: String,
    /// Id of the intact case the corruption was derived from.
    pub base_case: String,
    /// Bank-relative path of the stored reference transcript.
    pub reference_transcript: String,
    pub expected_deltas: BTreeMap<Metric, f64>,
    pub tolerance: f64,
}

fn schema_version() -> u32 {
    CASE_SCHEMA_VERSION
}

fn one() -> u32 {
    1
}

/// One gold-standard clinical scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub id: String,
    pub name: String,
    #[serde(default = "one")]
    pub version: u32,
    pub category: Category,
    #[serde(default)]
    pub tags: Tags,
    #[serde(default)]
    pub scopes: Vec<String>,
    pub intro: String,
    #[serde(default)]
    pub fact_bank: Vec<Fact>,
    #[serde(default)]
    pub control_questions: Vec<String>,
    #[serde(default)]
    pub additional_answers: Vec<String>,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
    pub diagnosis: DiagnosisStandard,
    #[serde(default)]
    pub differential: Vec<String>,
    pub num_steps: u32,
    /// Per-case override of the simulation step limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u32>,
    pub diagnostic_workup: WeightedStandard,
    pub default_treatments: TreatmentStandard,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub complex_test_cases: Vec<ComplexVariant>,
    #[serde(default)]
    pub patient_archetype: PatientArchetype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_test_spec: Option<ErrorTestSpec>,
}

impl CaseRecord {
    pub fn is_technical(&self) -> bool {
        self.scopes.iter().any(|s| s.eq_ignore_ascii_case(TECHNICAL_SCOPE))
    }

    pub fn treatment_standard(&self) -> &WeightedStandard {
        &self.default_treatments.standard
    }

    pub fn critical_conditions(&self) -> &[CriticalCondition] {
        &self.default_treatments.critical_conditions
    }

    /// Materializes a complex variant as a standalone case.
    pub fn expand_variant(&self, variant: &ComplexVariant) -> CaseRecord {
        let mut child = self.clone();
        child.id = alloc::format!("{}/{}", self.id, variant.id);
        if let Some(name) = &variant.name {
            child.name = name.clone();
        }
        if let Some(intro) = &variant.intro {
            child.intro = intro.clone();
        }
        child.fact_bank.extend(variant.extra_facts.iter().cloned());
        child.attachments.extend(variant.extra_attachments.iter().cloned());
        if let Some(n) = variant.num_steps {
            child.num_steps = n;
        }
        if let Some(d) = variant.difficulty {
            child.tags.difficulty = Some(d);
        }
        child.complex_test_cases.clear();
        child
    }
}
