use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::record::{CaseRecord, Category};
use super::validate::{validate_case, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PublicationStatus {
    #[default]
    Draft,
    Published,
}

/// Authoring metadata kept next to each case.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub validators: Vec<String>,
    #[serde(default)]
    pub status: PublicationStatus,
}

/// Minimum number of physician validators for a published case.
pub const MIN_VALIDATORS: usize = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BankError {
    #[error("duplicate case id {0:?}")]
    DuplicateId(String),
    #[error("case {:?} failed validation: {} violation(s)", .0.case_id, .0.violations.len())]
    Invalid(ValidationReport),
    #[error("case {id:?} is published with {count} validator(s); at least {MIN_VALIDATORS} required")]
    InsufficientValidators { id: String, count: usize },
}

/// An immutable, validated collection of cases with lookup indexes.
#[derive(Debug, Clone, Default)]
pub struct CaseBank {
    cases: BTreeMap<String, CaseRecord>,
    provenance: BTreeMap<String, Provenance>,
    by_category: BTreeMap<Category, BTreeSet<String>>,
    by_scope: BTreeMap<String, BTreeSet<String>>,
    by_tag: BTreeMap<String, BTreeSet<String>>,
}

impl CaseBank {
    pub fn new<I>(entries: I) -> Result<Self, BankError>
    where
        I: IntoIterator<Item = (CaseRecord, Provenance)>,
    {
        let mut bank = CaseBank::default();
        for (case, provenance) in entries {
            if bank.cases.contains_key(&case.id) {
                return Err(BankError::DuplicateId(case.id));
            }
            let report = validate_case(&case);
            if !report.is_valid() {
                return Err(BankError::Invalid(report));
            }
            if provenance.status == PublicationStatus::Published && provenance.validators.len() < MIN_VALIDATORS {
                return Err(BankError::InsufficientValidators { id: case.id, count: provenance.validators.len() });
            }
            let id = case.id.clone();
            bank.by_category.entry(case.category).or_default().insert(id.clone());
            for scope in &case.scopes {
                bank.by_scope.entry(scope.clone()).or_default().insert(id.clone());
            }
            for tag in &case.tags.other {
                bank.by_tag.entry(tag.clone()).or_default().insert(id.clone());
            }
            bank.provenance.insert(id.clone(), provenance);
            bank.cases.insert(id, case);
        }
        Ok(bank)
    }

    /// Bank of draft cases without provenance details.
    pub fn from_cases<I: IntoIterator<Item = CaseRecord>>(cases: I) -> Result<Self, BankError> {
        Self::new(cases.into_iter().map(|c| (c, Provenance::default())))
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CaseRecord> {
        self.cases.get(id)
    }

    pub fn provenance(&self, id: &str) -> Option<&Provenance> {
        self.provenance.get(id)
    }

    /// Cases in id order.
    pub fn cases(&self) -> impl Iterator<Item = &CaseRecord> {
        self.cases.values()
    }

    pub fn in_category(&self, category: Category) -> impl Iterator<Item = &CaseRecord> {
        self.by_category
            .get(&category)
            .into_iter()
            .flat_map(|ids| ids.iter())
            .filter_map(|id| self.cases.get(id))
    }

    pub fn in_scope<'a>(&'a self, scope: &str) -> impl Iterator<Item = &'a CaseRecord> + 'a {
        self.by_scope
            .get(scope)
            .into_iter()
            .flat_map(|ids| ids.iter())
            .filter_map(|id| self.cases.get(id))
    }

    pub fn with_tag<'a>(&'a self, tag: &str) -> impl Iterator<Item = &'a CaseRecord> + 'a {
        self.by_tag
            .get(tag)
            .into_iter()
            .flat_map(|ids| ids.iter())
            .filter_map(|id| self.cases.get(id))
    }

    /// Cases eligible for clinical regression runs: non-Technical and not
    /// in the ErrorTests category.
    pub fn regression_cases(&self) -> impl Iterator<Item = &CaseRecord> {
        self.cases().filter(|c| !c.is_technical() && c.category.is_clinical())
    }

    pub fn error_tests(&self) -> impl Iterator<Item = &CaseRecord> {
        self.in_category(Category::ErrorTests).filter(|c| !c.is_technical())
    }
}
