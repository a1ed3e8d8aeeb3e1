//! JSON report envelope shared by the estimators and the CLI, plus a
//! small structural validator for the shipped report schemas.

use serde::Serialize;
use serde_json::Value;

/// Run metadata embedded in every stochastic report.
#[derive(Clone, Debug, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub seed: Option<u64>,
    pub n: Option<u64>,
    pub t: Option<f64>,
    pub build: String,
    pub workers: usize,
    pub wall_ms: u128,
}

/// Envelope: metadata plus the command-specific payload.
#[derive(Clone, Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub meta: RunMeta,
    pub result: T,
}

impl<T: Serialize> Report<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// Validate a JSON value against a small JSON-schema subset: `type`,
/// `properties`, `required`, `items`, `enum`. Returns the first violation
/// path, or None when valid.
pub fn validate_schema(schema: &Value, value: &Value) -> Option<String> {
    validate_at(schema, value, "$")
}

fn type_matches(ty: &str, value: &Value) -> bool {
    match ty {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "boolean" => value.is_boolean(),
        "integer" => value.is_i64() || value.is_u64(),
        // JSON numbers that are integers still count as numbers.
        "number" => value.is_number(),
        "null" => value.is_null(),
        _ => false,
    }
}

fn validate_at(schema: &Value, value: &Value, path: &str) -> Option<String> {
    if let Some(ty) = schema.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(t, value),
            Value::Array(ts) => ts
                .iter()
                .filter_map(|t| t.as_str())
                .any(|t| type_matches(t, value)),
            _ => false,
        };
        if !ok {
            return Some(format!("{path}: expected type {ty}, got {value}"));
        }
    }
    if let Some(allowed) = schema.get("enum").and_then(|e| e.as_array()) {
        if !allowed.contains(value) {
            return Some(format!("{path}: value {value} not in enum"));
        }
    }
    if let Some(required) = schema.get("required").and_then(|r| r.as_array()) {
        for key in required.iter().filter_map(|k| k.as_str()) {
            if value.get(key).is_none() {
                return Some(format!("{path}: missing required field `{key}`"));
            }
        }
    }
    if let Some(props) = schema.get("properties").and_then(|p| p.as_object()) {
        for (key, sub) in props {
            if let Some(v) = value.get(key) {
                if let Some(err) = validate_at(sub, v, &format!("{path}.{key}")) {
                    return Some(err);
                }
            }
        }
    }
    if let Some(items) = schema.get("items") {
        if let Some(arr) = value.as_array() {
            for (i, v) in arr.iter().enumerate() {
                if let Some(err) = validate_at(items, v, &format!("{path}[{i}]")) {
                    return Some(err);
                }
            }
        }
    }
    None
}
