use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::bank::CaseBank;
use super::record::{Category, Sex};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("case bank is empty")]
pub struct EmptyBank;

/// Share of one facet value, with its target band when one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetShare {
    pub key: String,
    pub count: usize,
    pub percent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<(f64, f64)>,
    /// Raised when a target band exists and the share lies outside it.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub total: usize,
    pub categories: Vec<FacetShare>,
    /// Over cases with a specified sex.
    pub sex: Vec<FacetShare>,
    pub unspecified_sex: usize,
    /// Over cases with a known age group.
    pub age_groups: Vec<FacetShare>,
    pub unknown_age: usize,
}

/// Target share bands modeled on the USMLE Step 2 CK discipline mix.
pub fn category_target(category: Category) -> Option<(f64, f64)> {
    match category {
        Category::InternalMedicine => Some((50.0, 60.0)),
        Category::Surgery => Some((25.0, 30.0)),
        Category::Pediatrics => Some((20.0, 25.0)),
        Category::ObGyn => Some((10.0, 20.0)),
        Category::Psychiatry => Some((10.0, 15.0)),
        _ => None,
    }
}

fn share(key: String, count: usize, total: usize, target: Option<(f64, f64)>) -> FacetShare {
    let percent = if total == 0 { 0.0 } else { count as f64 * 100.0 / total as f64 };
    let flagged = target.is_some_and(|(lo, hi)| percent < lo || percent > hi);
    FacetShare { key, count, percent, target, flagged }
}

pub fn distribution_report(bank: &CaseBank) -> Result<DistributionReport, EmptyBank> {
    if bank.is_empty() {
        return Err(EmptyBank);
    }
    let total = bank.len();
    let categories = Category::ALL
        .into_iter()
        .map(|c| share(c.name().to_string(), bank.in_category(c).count(), total, category_target(c)))
        .collect();

    let female = bank.cases().filter(|c| c.tags.sex == Sex::Female).count();
    let male = bank.cases().filter(|c| c.tags.sex == Sex::Male).count();
    let specified = female + male;
    let sex = if specified == 0 {
        Vec::new()
    } else {
        alloc::vec![
            share("female".to_string(), female, specified, None),
            share("male".to_string(), male, specified, None),
        ]
    };

    let mut ages: BTreeMap<&str, usize> = BTreeMap::new();
    for case in bank.cases() {
        if let Some(group) = &case.tags.age_group {
            *ages.entry(group.as_str()).or_default() += 1;
        }
    }
    let known: usize = ages.values().sum();
    let age_groups = ages.into_iter().map(|(k, n)| share(k.to_string(), n, known, None)).collect();

    Ok(DistributionReport {
        total,
        categories,
        sex,
        unspecified_sex: total - specified,
        age_groups,
        unknown_age: total - known,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::CaseRecord;
    use crate::testutil::sample_case;
    use alloc::format;

    fn round2(v: f64) -> f64 {
        libm::round(v * 100.0) / 100.0
    }

    fn bank_with(counts: &[(Category, usize)]) -> CaseBank {
        let mut cases: Vec<CaseRecord> = Vec::new();
        for (category, n) in counts {
            for i in 0..*n {
                let mut c = sample_case();
                c.id = format!("{category}-{i}");
                c.category = *category;
                cases.push(c);
            }
        }
        CaseBank::from_cases(cases).unwrap()
    }

    fn pct(report: &DistributionReport, key: &str) -> f64 {
        report.categories.iter().find(|s| s.key == key).unwrap().percent
    }

    #[test]
    fn reproduces_reference_category_mix() {
        // 569/188/183/186 of 1126 is the smallest bank matching all four
        // reference shares at two decimals.
        let bank = bank_with(&[
            (Category::InternalMedicine, 569),
            (Category::ObGyn, 188),
            (Category::Pediatrics, 183),
            (Category::Surgery, 186),
        ]);
        let r = distribution_report(&bank).unwrap();
        assert_eq!(round2(pct(&r, "InternalMedicine")), 50.53);
        assert_eq!(round2(pct(&r, "ObGyn")), 16.70);
        assert_eq!(round2(pct(&r, "Pediatrics")), 16.25);
        assert_eq!(round2(pct(&r, "Surgery")), 16.52);
        let sum: f64 = r.categories.iter().map(|s| s.percent).sum();
        assert!((sum - 100.0).abs() < 1e-9);
    }

    #[test]
    fn single_case_bank_flags() {
        let bank = bank_with(&[(Category::Surgery, 1)]);
        let r = distribution_report(&bank).unwrap();
        for s in &r.categories {
            let expect_flag = s.target.is_some();
            assert_eq!(s.flagged, expect_flag, "{}", s.key);
        }
        assert_eq!(pct(&r, "Surgery"), 100.0);
    }

    #[test]
    fn sex_split_reported_over_specified_cases() {
        let mut cases = Vec::new();
        for i in 0..41 {
            let mut c = sample_case();
            c.id = format!("c{i}");
            c.tags.sex = match i {
                0..20 => Sex::Female,
                20..39 => Sex::Male,
                _ => Sex::Unspecified,
            };
            c.tags.age_group = if i % 2 == 0 { Some("26-39".into()) } else { None };
            cases.push(c);
        }
        let r = distribution_report(&CaseBank::from_cases(cases).unwrap()).unwrap();
        assert_eq!(round2(r.sex[0].percent), 51.28);
        assert_eq!(round2(r.sex[1].percent), 48.72);
        assert_eq!(r.unspecified_sex, 2);
        assert_eq!(r.age_groups.len(), 1);
        assert_eq!(r.age_groups[0].percent, 100.0);
        assert_eq!(r.unknown_age, 20);
    }

    #[test]
    fn empty_bank_is_an_error() {
        assert_eq!(distribution_report(&CaseBank::default()), Err(EmptyBank));
    }
}
