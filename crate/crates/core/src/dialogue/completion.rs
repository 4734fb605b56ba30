use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Marker phrase used when a doctor endpoint cannot emit structured output.
pub const DEFAULT_MARKER_PHRASE: &str = "FINAL RECOMMENDATIONS";

const SENTINEL_KEY: &str = "final_recommendations";

/// Decides whether a doctor message closes the consultation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionDetector {
    pub marker_phrases: Vec<String>,
}

impl Default for CompletionDetector {
    fn default() -> Self {
        Self { marker_phrases: alloc::vec![DEFAULT_MARKER_PHRASE.to_string()] }
    }
}

fn has_sentinel(message: &str) -> bool {
    if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(message.trim()) {
        return map.get(SENTINEL_KEY) == Some(&Value::Bool(true));
    }
    message.lines().any(|line| {
        let cleaned: String = line.chars().filter(|c| !matches!(c, '"' | '\'' | '*' | '`')).collect();
        let Some((key, value)) = cleaned.split_once(':') else {
            return false;
        };
        key.trim().eq_ignore_ascii_case(SENTINEL_KEY) && value.trim().trim_end_matches(',').eq_ignore_ascii_case("true")
    })
}

impl CompletionDetector {
    /// Structured sentinel only, no phrase matching.
    pub fn sentinel_only() -> Self {
        Self { marker_phrases: Vec::new() }
    }

    pub fn is_final(&self, message: &str) -> bool {
        if has_sentinel(message) {
            return true;
        }
        let upper = message.to_uppercase();
        self.marker_phrases
            .iter()
            .filter(|p| !p.trim().is_empty())
            .any(|p| upper.contains(&p.to_uppercase()))
    }
}

/// Completion check with the default marker phrase.
pub fn detect_completion(doctor_message: &str) -> bool {
    CompletionDetector::default().is_final(doctor_message)
}

/// Structured final recommendation block. Doctors that support structured
/// output and the human console both emit this shape.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FinalRecommendations {
    pub final_recommendations: bool,
    #[serde(default)]
    pub diagnoses: Vec<String>,
    #[serde(default)]
    pub icd10: Vec<String>,
    #[serde(default)]
    pub differential: Vec<String>,
    #[serde(default)]
    pub investigations: Vec<String>,
    #[serde(default)]
    pub treatments: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl FinalRecommendations {
    /// Parses a message that is exactly one structured block.
    pub fn parse(message: &str) -> Option<Self> {
        let parsed: Self = serde_json::from_str(message.trim()).ok()?;
        parsed.final_recommendations.then_some(parsed)
    }

    pub fn to_message(&self) -> String {
        let mut block = self.clone();
        block.final_recommendations = true;
        serde_json::to_string(&block).expect("recommendations serialize")
    }

    pub fn is_empty(&self) -> bool {
        self.diagnoses.iter().all(|d| d.trim().is_empty())
            && self.treatments.is_empty()
            && self.investigations.is_empty()
            && self.differential.is_empty()
            && self.icd10.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinel_line_and_json() {
        assert!(detect_completion("Summary follows.\nfinal_recommendations: true\nDiagnosis: cystitis"));
        assert!(detect_completion(r#"{"final_recommendations": true, "diagnoses": ["x"]}"#));
        assert!(!detect_completion(r#"{"final_recommendations": false}"#));
        assert!(!detect_completion("final_recommendations: false"));
    }

    #[test]
    fn plain_question_is_not_final() {
        assert!(!detect_completion("Any fever?"));
    }

    #[test]
    fn configured_phrase() {
        let d = CompletionDetector { marker_phrases: alloc::vec!["here is my plan".into()] };
        assert!(d.is_final("OK. Here is my plan: rest."));
        assert!(!d.is_final("FINAL RECOMMENDATIONS"));
        assert!(!CompletionDetector::sentinel_only().is_final("FINAL RECOMMENDATIONS"));
        assert!(detect_completion("final recommendations: drink water"));
    }

    #[test]
    fn structured_block_round_trip() {
        let block = FinalRecommendations {
            diagnoses: alloc::vec!["Acute cystitis".into()],
            treatments: alloc::vec!["Nitrofurantoin".into()],
            ..Default::default()
        };
        let msg = block.to_message();
        assert!(detect_completion(&msg));
        let parsed = FinalRecommendations::parse(&msg).unwrap();
        assert!(parsed.final_recommendations);
        assert_eq!(parsed.treatments, block.treatments);
        assert!(FinalRecommendations::parse("Diagnosis: cystitis").is_none());
    }
}
