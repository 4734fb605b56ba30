use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bank::CaseBank;
use super::record::Category;
use crate::scoring::DotsRecord;

/// Cases whose prior score falls below this value are always re-run.
pub const FORCE_INCLUDE_BELOW: f64 = 70.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("prior score {score} for case {case_id:?} is outside [0, 100]")]
    InvalidPrior { case_id: String, score: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CategorySelection {
    pub selected: Vec<String>,
    pub forced: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Level2Selection {
    pub per_category: BTreeMap<Category, CategorySelection>,
    /// Clinical categories that had no eligible case.
    pub empty_categories: Vec<Category>,
}

impl Level2Selection {
    /// All selected case ids, grouped by category in category order.
    pub fn case_ids(&self) -> Vec<String> {
        self.per_category.values().flat_map(|s| s.selected.iter().cloned()).collect()
    }

    pub fn forced(&self) -> Vec<String> {
        self.per_category.values().flat_map(|s| s.forced.iter().cloned()).collect()
    }
}

/// The score used for Level-2 forcing: the minimum of diagnosis accuracy,
/// treatment accuracy and weighted diagnostic accuracy.
pub fn prior_score(record: &DotsRecord) -> f64 {
    record
        .diagnosis_accuracy
        .min(record.treatment_accuracy)
        .min(record.diagnostic_accuracy)
}

/// Category-stratified sample: every case with a prior score below 70 plus
/// uniformly drawn others up to `per_category`. Technical-scoped and
/// ErrorTests cases are never selected.
pub fn sample_level2(
    bank: &CaseBank,
    per_category: usize,
    prior: &BTreeMap<String, f64>,
    seed: u64,
) -> Result<Level2Selection, SamplingError> {
    for (case_id, &score) in prior {
        if !(0.0..=100.0).contains(&score) {
            return Err(SamplingError::InvalidPrior { case_id: case_id.clone(), score });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selection = Level2Selection::default();
    for category in Category::ALL.into_iter().filter(|c| c.is_clinical()) {
        let eligible: Vec<&str> = bank
            .in_category(category)
            .filter(|c| !c.is_technical())
            .map(|c| c.id.as_str())
            .collect();
        if eligible.is_empty() {
            selection.empty_categories.push(category);
            continue;
        }
        let (forced, mut others): (Vec<&str>, Vec<&str>) = eligible
            .into_iter()
            .partition(|id| prior.get(*id).is_some_and(|s| *s < FORCE_INCLUDE_BELOW));
        others.shuffle(&mut rng);
        let room = per_category.saturating_sub(forced.len());
        let mut selected: Vec<String> = forced.iter().map(|s| String::from(*s)).collect();
        selected.extend(others.into_iter().take(room).map(String::from));
        selection.per_category.insert(
            category,
            CategorySelection { selected, forced: forced.into_iter().map(String::from).collect() },
        );
    }
    Ok(selection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::CaseRecord;
    use crate::testutil::sample_case;
    use alloc::format;
    use alloc::vec;

    fn bank(categories: &[(Category, usize)]) -> CaseBank {
        let mut cases: Vec<CaseRecord> = Vec::new();
        for (category, n) in categories {
            for i in 0..*n {
                let mut c = sample_case();
                c.id = format!("{category}-{i}");
                c.category = *category;
                cases.push(c);
            }
        }
        CaseBank::from_cases(cases).unwrap()
    }

    #[test]
    fn two_per_category_without_priors() {
        let bank = bank(&[(Category::Surgery, 5), (Category::Pediatrics, 5)]);
        let sel = sample_level2(&bank, 2, &BTreeMap::new(), 7).unwrap();
        assert_eq!(sel.case_ids().len(), 4);
        for s in sel.per_category.values() {
            assert_eq!(s.selected.len(), 2);
        }
        assert!(sel.empty_categories.contains(&Category::Oncology));
        assert!(!sel.empty_categories.contains(&Category::ErrorTests));
    }

    #[test]
    fn low_prior_forces_inclusion() {
        let bank = bank(&[(Category::Surgery, 5)]);
        let prior = BTreeMap::from([("Surgery-3".into(), 65.0)]);
        for seed in 0..50 {
            let sel = sample_level2(&bank, 1, &prior, seed).unwrap();
            assert_eq!(sel.case_ids(), vec![String::from("Surgery-3")]);
        }
    }

    #[test]
    fn forced_cases_exceeding_quota_are_all_kept() {
        let bank = bank(&[(Category::Surgery, 4)]);
        let prior: BTreeMap<String, f64> = (0..3).map(|i| (format!("Surgery-{i}"), 10.0)).collect();
        let sel = sample_level2(&bank, 1, &prior, 1).unwrap();
        assert_eq!(sel.case_ids().len(), 3);
    }

    #[test]
    fn technical_and_error_tests_excluded() {
        let mut technical = sample_case();
        technical.id = "tech".into();
        technical.scopes = vec!["Technical".into()];
        let bank = CaseBank::from_cases([technical]).unwrap();
        let sel = sample_level2(&bank, 5, &BTreeMap::new(), 0).unwrap();
        assert!(sel.case_ids().is_empty());
        assert!(sel.empty_categories.contains(&Category::InternalMedicine));
    }

    #[test]
    fn out_of_range_prior_is_rejected() {
        let bank = bank(&[(Category::Surgery, 1)]);
        let prior = BTreeMap::from([("x".into(), 140.0)]);
        assert!(sample_level2(&bank, 1, &prior, 0).is_err());
    }

    #[test]
    fn same_seed_same_selection() {
        let bank = bank(&[(Category::Surgery, 9), (Category::Psychiatry, 7)]);
        let a = sample_level2(&bank, 3, &BTreeMap::new(), 42).unwrap();
        let b = sample_level2(&bank, 3, &BTreeMap::new(), 42).unwrap();
        assert_eq!(a, b);
    }
}
