//! ICD-10 code normalization and code-level matching rules.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed ICD-10 code {0:?}")]
pub struct MalformedCode(pub String);

/// A normalized ICD-10 code: uppercase, no dots or whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Icd10Code(String);

impl Icd10Code {
    /// Normalizes and checks the shape: one letter, two digits, then up to
    /// four alphanumeric subcategory characters.
    pub fn parse(raw: &str) -> Result<Self, MalformedCode> {
        let code: String = raw
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '.')
            .flat_map(char::to_uppercase)
            .collect();
        let bytes = code.as_bytes();
        let shape_ok = bytes.len() >= 3
            && bytes.len() <= 7
            && bytes[0].is_ascii_uppercase()
            && bytes[1].is_ascii_digit()
            && bytes[2].is_ascii_digit()
            && bytes[3..].iter().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit());
        if shape_ok {
            Ok(Self(code))
        } else {
            Err(MalformedCode(String::from(raw)))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The three-character category, e.g. `N39` for `N390`.
    pub fn category(&self) -> &str {
        &self.0[..3]
    }

    pub fn has_subcategory(&self) -> bool {
        self.0.len() > 3
    }

    /// Whether this predicted code is accepted by a single expected code.
    pub fn matches(&self, expected: &Icd10Code) -> bool {
        self == expected || (!expected.has_subcategory() && self.category() == expected.category())
    }
}

impl TryFrom<String> for Icd10Code {
    type Error = MalformedCode;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<Icd10Code> for String {
    fn from(code: Icd10Code) -> Self {
        code.0
    }
}

impl fmt::Display for Icd10Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Deterministic code-level matching: exact equality after normalization, or
/// equality of the 3-character category when the expected code has no
/// subcategory.
pub fn match_icd10<S: AsRef<str>>(predicted: &str, expected: &[S]) -> Result<bool, MalformedCode> {
    let predicted = Icd10Code::parse(predicted)?;
    let mut hit = false;
    for code in expected {
        let code = Icd10Code::parse(code.as_ref())?;
        hit |= predicted.matches(&code);
    }
    Ok(hit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_is_case_and_dot_insensitive() {
        assert_eq!(match_icd10("n39.0", &["N39.0"]), Ok(true));
        assert_eq!(match_icd10(" i10 ", &["I10"]), Ok(true));
        assert_eq!(Icd10Code::parse("s72.001a").unwrap().as_str(), "S72001A");
    }

    /// Rule table: (predicted, expected, outcome), enumerated by hand from the
    /// category-prefix rule.
    #[test]
    fn category_prefix_rule_table() {
        let table = [
            ("N39.0", "N39", true),
            ("N39", "N39.0", false),
            ("N39.0", "N39.0", true),
            ("N39.0", "N39.9", false),
            ("N39", "N39", true),
            ("N30.0", "N39", false),
            ("J02.9", "J02", true),
            ("J02", "J03", false),
            ("E11.65", "E11.6", false),
        ];
        for (predicted, expected, outcome) in table {
            assert_eq!(match_icd10(predicted, &[expected]), Ok(outcome), "{predicted} vs {expected}");
        }
    }

    #[test]
    fn any_of_several_expected_codes() {
        assert_eq!(match_icd10("R10.4", &["N30.0", "R10"]), Ok(true));
        assert_eq!(match_icd10("R51", &["N30.0", "R10"]), Ok(false));
    }

    #[test]
    fn malformed_codes_are_rejected() {
        for bad in ["", "39.0", "NN9", "N3", "N39.012345", "N3X", "N39-0"] {
            assert!(match_icd10(bad, &["N39"]).is_err(), "{bad}");
        }
        assert!(match_icd10("N39", &["bogus"]).is_err());
    }
}
