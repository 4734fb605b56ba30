//! Declarative response schemas for structured judge output.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldKind {
    Text,
    Bool,
    Integer,
    Number,
    Enum { values: Vec<String> },
    List { item: Box<FieldKind> },
    Object { fields: Vec<FieldSpec> },
    Nullable { inner: Box<FieldKind> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub required: bool,
}

impl FieldSpec {
    pub fn required(name: &str, kind: FieldKind) -> Self {
        Self { name: name.to_string(), kind, required: true }
    }

    pub fn optional(name: &str, kind: FieldKind) -> Self {
        Self { name: name.to_string(), kind, required: false }
    }
}

impl FieldKind {
    pub fn list(item: FieldKind) -> Self {
        FieldKind::List { item: Box::new(item) }
    }

    pub fn nullable(inner: FieldKind) -> Self {
        FieldKind::Nullable { inner: Box::new(inner) }
    }

    pub fn object(fields: Vec<FieldSpec>) -> Self {
        FieldKind::Object { fields }
    }
}

/// A named top-level object schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSchema {
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

fn err(path: &str, message: String) -> SchemaError {
    SchemaError { path: path.to_string(), message }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "list",
        Value::Object(_) => "object",
    }
}

fn check_fields(fields: &[FieldSpec], value: &Value, path: &str) -> Result<(), SchemaError> {
    let Value::Object(map) = value else {
        return Err(err(path, format!("expected object, found {}", type_name(value))));
    };
    for field in fields {
        let child = format!("{path}.{}", field.name);
        match map.get(&field.name) {
            Some(v) => check_kind(&field.kind, v, &child)?,
            None if field.required => return Err(err(&child, String::from("required field missing"))),
            None => {}
        }
    }
    Ok(())
}

fn check_kind(kind: &FieldKind, value: &Value, path: &str) -> Result<(), SchemaError> {
    let mismatch = |expected: &str| err(path, format!("expected {expected}, found {}", type_name(value)));
    match kind {
        FieldKind::Text => value.as_str().map(|_| ()).ok_or_else(|| mismatch("string")),
        FieldKind::Bool => value.as_bool().map(|_| ()).ok_or_else(|| mismatch("bool")),
        FieldKind::Integer => value.as_i64().map(|_| ()).ok_or_else(|| mismatch("integer")),
        FieldKind::Number => value.as_f64().map(|_| ()).ok_or_else(|| mismatch("number")),
        FieldKind::Enum { values } => {
            let s = value.as_str().ok_or_else(|| mismatch("string"))?;
            if values.iter().any(|v| v == s) {
                Ok(())
            } else {
                Err(err(path, format!("{s:?} is not one of {values:?}")))
            }
        }
        FieldKind::List { item } => {
            let items = value.as_array().ok_or_else(|| mismatch("list"))?;
            for (i, v) in items.iter().enumerate() {
                check_kind(item, v, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        FieldKind::Object { fields } => check_fields(fields, value, path),
        FieldKind::Nullable { inner } => {
            if value.is_null() {
                Ok(())
            } else {
                check_kind(inner, value, path)
            }
        }
    }
}

impl ExtractionSchema {
    pub fn new(name: &str, fields: Vec<FieldSpec>) -> Self {
        Self { name: name.to_string(), fields }
    }

    /// A usable schema has at least one required top-level field.
    pub fn is_usable(&self) -> bool {
        self.fields.iter().any(|f| f.required)
    }

    pub fn validate(&self, value: &Value) -> Result<(), SchemaError> {
        check_fields(&self.fields, value, "$")
    }

    /// Parses a model reply, tolerating a surrounding markdown code fence.
    pub fn parse(&self, reply: &str) -> Result<Value, SchemaError> {
        let body = strip_fence(reply);
        let value: Value = serde_json::from_str(body).map_err(|e| err("$", format!("invalid JSON: {e}")))?;
        self.validate(&value)?;
        Ok(value)
    }

    /// Compact textual rendering for prompts.
    pub fn describe(&self) -> String {
        serde_json::to_string(&self.fields).unwrap_or_default()
    }
}

fn strip_fence(reply: &str) -> &str {
    let trimmed = reply.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use serde_json::json;

    fn schema() -> ExtractionSchema {
        ExtractionSchema::new(
            "questions",
            vec![FieldSpec::required(
                "questions",
                FieldKind::list(FieldKind::object(vec![
                    FieldSpec::required("question", FieldKind::Text),
                    FieldSpec::required("asked", FieldKind::Bool),
                    FieldSpec::optional("evidence", FieldKind::nullable(FieldKind::Text)),
                ])),
            )],
        )
    }

    #[test]
    fn accepts_conforming_record() {
        let v = json!({"questions": [{"question": "fever?", "asked": true, "evidence": null}]});
        assert!(schema().validate(&v).is_ok());
    }

    #[test]
    fn reports_path_of_first_violation() {
        let v = json!({"questions": [{"question": "fever?", "asked": "yes"}]});
        let e = schema().validate(&v).unwrap_err();
        assert_eq!(e.path, "$.questions[0].asked");
        let e = schema().parse("{}").unwrap_err();
        assert_eq!(e.path, "$.questions");
        assert!(schema().parse("not json").is_err());
    }

    #[test]
    fn fenced_json_is_accepted() {
        let reply = "```json\n{\"questions\": []}\n```";
        assert!(schema().parse(reply).is_ok());
    }

    #[test]
    fn enum_values_enforced() {
        let s = ExtractionSchema::new(
            "status",
            vec![FieldSpec::required("result", FieldKind::Enum { values: vec!["OK".into(), "VIOLATED".into()] })],
        );
        assert!(s.validate(&json!({"result": "OK"})).is_ok());
        assert!(s.validate(&json!({"result": "MAYBE"})).is_err());
        assert!(!ExtractionSchema::new("empty", vec![]).is_usable());
    }
}
