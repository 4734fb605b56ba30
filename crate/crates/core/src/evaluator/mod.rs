//! Evidence-anchored extraction of final recommendations from transcripts.

mod critical;
mod judge;
mod record;
mod tasks;

pub use critical::{condition_status, trigger_fires, verify_critical_conditions};
pub use judge::{judge_messages, Judge, JudgeError, JudgeTask, ModelJudge, NoJudge};
pub use record::*;
pub use tasks::{
    anchor_evidence, evaluate_transcript, merge_outputs, run_task, ClinicalPart, EvaluationError, TaskOutput,
    TreatmentPart, WorkupPart,
};
pub use crate::icd10::match_icd10;
pub use crate::text::match_clinical_text;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::dialogue::{FinalRecommendations, Speaker, Termination, Transcript, Turn, TurnKind};
    use crate::gateway::{Gateway, GatewayError, ProviderConfig, ReplayEntry, ScriptedModel};
    use crate::testutil::sample_case;
    use alloc::string::{String, ToString};
    use alloc::sync::Arc;
    use alloc::vec;
    use alloc::vec::Vec;
    use serde_json::json;

    fn transcript(questions: &[&str], final_text: Option<&str>) -> Transcript {
        let mut turns = vec![Turn {
            seq: 0,
            speaker: Speaker::Patient,
            kind: TurnKind::Intro,
            text: "It burns when I pee.".into(),
            attachments: vec![],
            timestamp_ms: 0,
        }];
        for q in questions {
            let seq = turns.len() as u32;
            turns.push(Turn { seq, speaker: Speaker::Doctor, kind: TurnKind::Question, text: q.to_string(), attachments: vec![], timestamp_ms: 0 });
            turns.push(Turn { seq: seq + 1, speaker: Speaker::Patient, kind: TurnKind::Answer, text: "No.".into(), attachments: vec![], timestamp_ms: 0 });
        }
        if let Some(f) = final_text {
            let seq = turns.len() as u32;
            turns.push(Turn { seq, speaker: Speaker::Doctor, kind: TurnKind::Final, text: f.into(), attachments: vec![], timestamp_ms: 0 });
        }
        Transcript {
            case_id: "im-uti-001".into(),
            run_id: "run".into(),
            turns,
            is_conversation_complete: final_text.is_some(),
            termination: if final_text.is_some() { Termination::DoctorFinalized } else { Termination::StepLimit },
            error: None,
            doctor: "d".into(),
            patient: "p".into(),
            seed: 0,
        }
    }

    fn judge(entries: Vec<ReplayEntry>) -> ModelJudge<ScriptedModel> {
        let mut config = ProviderConfig::new("scripted:test", "judge");
        config.schema_retries = 1;
        config.max_retries = 0;
        ModelJudge::new(Gateway::new(ScriptedModel::new(entries), config, Arc::new(ManualClock::new(0))))
    }

    fn structured() -> String {
        FinalRecommendations {
            diagnoses: vec!["Acute cystitis".into()],
            icd10: vec!["n30.0".into()],
            differential: vec!["Urethritis".into(), "Pyelonephritis".into()],
            investigations: vec!["Urinalysis".into(), "Renal ultrasound".into()],
            treatments: vec!["Nitrofurantoin 100 mg twice daily".into(), "Ibuprofen".into(), "Ciprofloxacin".into()],
            ..Default::default()
        }
        .to_message()
    }

    #[test]
    fn structured_final_is_scored_without_judge() {
        let case = sample_case();
        let t = transcript(&["Do you have a fever?", "Do you have any allergies?"], Some(&structured()));
        let r = evaluate_transcript(&t, &case, &mut NoJudge).unwrap();
        assert!(r.diagnoses_results[0].correct);
        assert_eq!(r.diagnoses_results[0].evidence, "Acute cystitis");
        assert!(r.icd10_results[0].correct);
        let diff: Vec<bool> = r.differential_results.iter().map(|d| d.correct).collect();
        assert_eq!(diff, vec![true, true, false]);
        assert_eq!(r.predicted_differential_ranked, vec!["Acute cystitis", "Urethritis", "Pyelonephritis"]);
        let asked: Vec<bool> = r.questions_asked.iter().map(|q| q.asked).collect();
        assert_eq!(asked, vec![true, true, false]);
        let c = &r.treatment_counts;
        assert_eq!((c.matching, c.extra, c.missing, c.different), (1, 1, 1, 0));
        assert_eq!(c.optional_items, vec!["Ibuprofen".to_string()]);
        assert_eq!(r.workup_match.matched_mandatory, vec!["Urinalysis".to_string()]);
        assert_eq!(r.workup_match.unexpected, vec!["Renal ultrasound".to_string()]);
        assert_eq!(r.critical_conditions[0].status, CriticalStatus::Ok);
        assert!(r.is_conversation_complete);
    }

    #[test]
    fn step_limit_transcript_has_empty_recommendations() {
        let case = sample_case();
        let t = transcript(&["Do you have a fever?"], None);
        let history = json!({"questions": [{"question": "Do you have a fever?", "asked": true, "evidence": "Do you have a fever?"}]});
        let r = evaluate_transcript(&t, &case, &mut judge(vec![ReplayEntry::reply("judge:history", &history.to_string())])).unwrap();
        assert!(r.diagnoses_results.is_empty());
        assert!(r.treatments.is_empty() && r.investigations.is_empty());
        assert_eq!(r.treatment_counts.missing, 2);
        assert!(!r.is_conversation_complete);
        assert!(r.differential_results.iter().all(|d| !d.correct));
    }

    #[test]
    fn free_text_final_uses_judge_and_anchors_evidence() {
        let case = sample_case();
        let final_text = "FINAL RECOMMENDATIONS\nDiagnosis: lower urinary tract infection (N39.0).\n\
            Differential: urethritis.\nTests: dipstick urinalysis.\nPlan: fosfomycin 3 g once; drink plenty of fluids.";
        let t = transcript(&["Any fever or chills?"], Some(final_text));
        let mut j = judge(vec![
            ReplayEntry::reply("judge:clinical", &json!({
                "diagnoses": [
                    {"text": "lower urinary tract infection", "evidence": "lower urinary tract infection", "gold_match": "Urinary tract infection"},
                    {"text": "kidney stones", "evidence": "stones in the kidney", "gold_match": null}
                ],
                "icd10_codes": [{"code": "N39.0", "evidence": "N39.0"}],
                "differential": [{"text": "urethritis", "evidence": "urethritis", "matches_expected": "Urethritis"}]
            }).to_string()),
            ReplayEntry::reply("judge:history", &json!({
                "questions": [{"question": "Do you have a fever?", "asked": true, "evidence": "Any fever or chills?"}]
            }).to_string()),
            ReplayEntry::reply("judge:treatment", &json!({
                "treatments": [
                    {"name": "fosfomycin", "evidence": "fosfomycin 3 g once", "matches": null, "targets": "Nitrofurantoin"},
                    {"name": "fluids", "evidence": "drink plenty of fluids", "matches": "Increased fluid intake"}
                ]
            }).to_string()),
            ReplayEntry::reply("judge:workup", &json!({
                "investigations": [{"name": "urinalysis", "evidence": "dipstick urinalysis", "matches": "Urinalysis"}]
            }).to_string()),
        ]);
        let r = evaluate_transcript(&t, &case, &mut j).unwrap();
        assert!(r.diagnoses_results[0].correct);
        assert_eq!(r.diagnoses_results[0].matched_gold.as_deref(), Some("Urinary tract infection"));
        assert!(!r.diagnoses_results[1].correct);
        assert_eq!(r.diagnoses_results[1].evidence, NO_EVIDENCE);
        assert!(r.icd10_results[0].correct);
        assert!(r.differential_results[1].correct);
        assert_eq!(r.predicted_differential_ranked, vec!["Urinary tract infection", "urethritis"]);
        assert!(r.questions_asked[0].asked);
        assert_eq!(r.questions_asked[0].evidence, "Any fever or chills?");
        let c = &r.treatment_counts;
        assert_eq!((c.matching, c.extra, c.missing, c.different), (1, 0, 0, 1));
        assert_eq!(r.workup_match.matched_mandatory, vec!["Urinalysis".to_string()]);
        for item in r.treatments.iter().chain(r.investigations.iter()) {
            assert!(final_text.contains(&item.evidence));
        }
    }

    #[test]
    fn schema_violation_fails_the_evaluation() {
        let case = sample_case();
        let t = transcript(&[], Some("FINAL RECOMMENDATIONS: cystitis"));
        let mut j = judge(vec![
            ReplayEntry::reply("judge:clinical", "{\"diagnoses\": 3}"),
            ReplayEntry::reply("judge:clinical", "not json"),
        ]);
        let err = evaluate_transcript(&t, &case, &mut j).unwrap_err();
        assert_eq!(err.task, JudgeTask::Clinical);
        assert!(matches!(err.error, JudgeError::Gateway(GatewayError::SchemaViolation { attempts: 2, .. })));
    }

    #[test]
    fn exact_match_needs_no_judge_call() {
        let called = core::cell::Cell::new(false);
        let gold = vec!["Acute cystitis".to_string()];
        assert!(match_clinical_text("acute cystitis", &gold, &[], || {
            called.set(true);
            false
        }));
        assert!(!called.get());
        let synonyms = vec!["pelvic organ prolapse".to_string()];
        assert!(match_clinical_text("Pelvic organ prolapse", &["pelvic prolapse".to_string()], &synonyms, || false));
        assert!(!match_clinical_text("migraine", &gold, &[], || false));
    }
}
