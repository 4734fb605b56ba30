use alloc::vec::Vec;

use super::record::{CriticalResult, CriticalStatus, ExtractedItem, ExtractionRecord};
use crate::case::{CaseRecord, CriticalCondition, Trigger};
use crate::text::contains_phrase;

fn mentions(items: &[ExtractedItem], names: &[alloc::string::String]) -> bool {
    items.iter().any(|item| names.iter().any(|n| contains_phrase(&item.name, n)))
}

/// Evaluates a declarative trigger against extracted recommendations.
pub fn trigger_fires(trigger: &Trigger, treatments: &[ExtractedItem], investigations: &[ExtractedItem]) -> bool {
    match trigger {
        Trigger::TreatmentAny { any_of } => mentions(treatments, any_of),
        Trigger::InvestigationAny { any_of } => mentions(investigations, any_of),
        Trigger::TreatmentAbsent { any_of } => !mentions(treatments, any_of),
        Trigger::All { triggers } => {
            !triggers.is_empty() && triggers.iter().all(|t| trigger_fires(t, treatments, investigations))
        }
        Trigger::Any { triggers } => triggers.iter().any(|t| trigger_fires(t, treatments, investigations)),
    }
}

pub fn condition_status(
    condition: &CriticalCondition,
    case: &CaseRecord,
    treatments: &[ExtractedItem],
    investigations: &[ExtractedItem],
) -> CriticalStatus {
    if !condition.applies_to.admits(&case.tags) {
        CriticalStatus::NotApplicable
    } else if trigger_fires(&condition.trigger, treatments, investigations) {
        CriticalStatus::Violated
    } else {
        CriticalStatus::Ok
    }
}

/// One status per critical condition of the case, in case order.
pub fn verify_critical_conditions(extraction: &ExtractionRecord, case: &CaseRecord) -> Vec<CriticalResult> {
    case.critical_conditions()
        .iter()
        .map(|c| CriticalResult {
            condition: c.description.clone(),
            status: condition_status(c, case, &extraction.treatments, &extraction.investigations),
            severity: c.severity,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{Applicability, Sex};
    use crate::testutil::sample_case;
    use alloc::vec;

    fn item(name: &str) -> ExtractedItem {
        ExtractedItem { name: name.into(), evidence: name.into() }
    }

    fn penicillin_case() -> CaseRecord {
        let mut case = sample_case();
        case.default_treatments.critical_conditions = vec![CriticalCondition {
            description: "Penicillin-class antibiotic despite documented penicillin allergy".into(),
            trigger: Trigger::TreatmentAny { any_of: vec!["amoxicillin".into(), "penicillin".into(), "ampicillin".into()] },
            applies_to: Applicability::default(),
            severity: 1.0,
        }];
        case
    }

    #[test]
    fn amoxicillin_with_penicillin_allergy_is_violated() {
        let case = penicillin_case();
        let mut e = ExtractionRecord::empty(&case.id, "r");
        e.treatments = vec![item("Amoxicillin 500 mg three times daily")];
        let r = verify_critical_conditions(&e, &case);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].status, CriticalStatus::Violated);
        e.treatments = vec![item("Nitrofurantoin")];
        assert_eq!(verify_critical_conditions(&e, &case)[0].status, CriticalStatus::Ok);
    }

    #[test]
    fn no_conditions_gives_empty_list() {
        let mut case = sample_case();
        case.default_treatments.critical_conditions.clear();
        assert!(verify_critical_conditions(&ExtractionRecord::empty("c", "r"), &case).is_empty());
    }

    #[test]
    fn pregnancy_condition_on_male_case_is_not_applicable() {
        let mut case = sample_case();
        case.tags.sex = Sex::Male;
        case.default_treatments.critical_conditions = vec![CriticalCondition {
            description: "Teratogenic drug in pregnancy".into(),
            trigger: Trigger::TreatmentAny { any_of: vec!["isotretinoin".into()] },
            applies_to: Applicability { sex: Some(Sex::Female), ..Default::default() },
            severity: 1.0,
        }];
        let mut e = ExtractionRecord::empty(&case.id, "r");
        e.treatments = vec![item("isotretinoin")];
        assert_eq!(verify_critical_conditions(&e, &case)[0].status, CriticalStatus::NotApplicable);
    }

    #[test]
    fn composite_triggers() {
        let t = [item("Ceftriaxone 2 g IV")];
        let i = [item("Lumbar puncture")];
        let all = Trigger::All {
            triggers: vec![
                Trigger::InvestigationAny { any_of: vec!["lumbar puncture".into()] },
                Trigger::TreatmentAbsent { any_of: vec!["ceftriaxone".into()] },
            ],
        };
        assert!(!trigger_fires(&all, &t, &i));
        assert!(trigger_fires(&all, &[], &i));
        assert!(!trigger_fires(&Trigger::All { triggers: vec![] }, &t, &i));
        assert!(trigger_fires(&Trigger::Any { triggers: vec![all] }, &[], &i));
    }
}
