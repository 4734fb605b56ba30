//! The structured case bank: records, validation, sampling and dataset
//! distribution reporting.

mod bank;
mod distribution;
mod record;
mod sampling;
mod validate;

pub use bank::{BankError, CaseBank, Provenance, PublicationStatus};
pub use distribution::{distribution_report, DistributionReport, FacetShare, EmptyBank};
pub use record::*;
pub use sampling::{sample_level2, prior_score, CategorySelection, Level2Selection, SamplingError, FORCE_INCLUDE_BELOW};
pub use validate::{validate_case, validate_successor, ValidationReport, Violation, ViolationCode};
