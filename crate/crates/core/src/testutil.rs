//! Shared fixtures for unit tests.

use alloc::vec;
use alloc::vec::Vec;
use alloc::string::String;

use crate::case::*;

fn fact(topic: &str, keywords: &[&str], answer: &str) -> Fact {
    Fact { topic: topic.into(), keywords: keywords.iter().map(|k| String::from(*k)).collect(), answer: answer.into() }
}

fn mandatory(name: &str, weight: f64) -> MandatoryItem {
    MandatoryItem { name: name.into(), weight, aliases: Vec::new() }
}

/// A valid uncomplicated cystitis case.
pub fn sample_case() -> CaseRecord {
    CaseRecord {
        schema_version: CASE_SCHEMA_VERSION,
        id: "im-uti-001".into(),
        name: "Burning on urination".into(),
        version: 1,
        category: Category::InternalMedicine,
        tags: Tags { sex: Sex::Female, age_group: Some("adult".into()), difficulty: Some(Difficulty::Basic), other: vec![] },
        scopes: vec!["Urology".into()],
        intro: "Hi doctor, it burns when I pee and I have to go all the time.".into(),
        fact_bank: vec![
            fact("duration", &["how long", "when did", "started"], "It started two days ago."),
            fact("fever", &["temperature", "chills"], "No fever, I checked this morning."),
            fact("allergies", &["allergic", "allergy"], "I'm allergic to sulfa drugs, I get a rash."),
            fact("pregnancy", &["pregnant", "period"], "I'm not pregnant, my period ended last week."),
            fact("flank pain", &["back pain", "side"], "No pain in my back or sides."),
        ],
        control_questions: vec![
            "Do you have a fever?".into(),
            "Do you have any allergies?".into(),
            "Could you be pregnant?".into(),
        ],
        additional_answers: vec!["Cystitis".into(), "Bladder infection".into()],
        attachments: vec![],
        diagnosis: DiagnosisStandard {
            texts: vec!["Acute cystitis".into(), "Urinary tract infection".into()],
            icd10: vec!["N30.0".into(), "N39.0".into()],
        },
        differential: vec!["Pyelonephritis".into(), "Urethritis".into(), "Vaginitis".into()],
        num_steps: 6,
        max_steps: None,
        diagnostic_workup: WeightedStandard {
            mandatory: vec![mandatory("Urinalysis", 70.0), mandatory("Urine culture", 30.0)],
            optional: vec![OptionalItem { name: "Pregnancy test".into(), aliases: vec![] }],
            unexpected_penalty: 5.0,
        },
        default_treatments: TreatmentStandard {
            standard: WeightedStandard {
                mandatory: vec![mandatory("Nitrofurantoin", 80.0), mandatory("Increased fluid intake", 20.0)],
                optional: vec![OptionalItem { name: "Ibuprofen".into(), aliases: vec![] }],
                unexpected_penalty: 5.0,
            },
            critical_conditions: vec![CriticalCondition {
                description: "Sulfonamide prescribed despite sulfa allergy".into(),
                trigger: Trigger::TreatmentAny {
                    any_of: vec!["trimethoprim-sulfamethoxazole".into(), "co-trimoxazole".into(), "sulfamethoxazole".into()],
                },
                applies_to: Applicability::default(),
                severity: 1.0,
            }],
        },
        complex_test_cases: vec![],
        patient_archetype: PatientArchetype::default(),
        error_test_spec: None,
    }
}
