//! Heuristic table profiling and its model interpretation.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use chrono::{DateTime, NaiveDate};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::KnowledgeError;
use crate::gateway::{CompletionRequest, Gateway};
use crate::table::Table;
use crate::text::extract_json;

pub const SAMPLE_SIZE: usize = 10;
pub const TAG_PROFILE: &str = "knowledge.profile";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferredType {
    Integer,
    Float,
    String,
    Date,
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub name: String,
    pub inferred_type: InferredType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<Value>,
    pub null_count: usize,
    pub distinct_count: usize,
    pub samples: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableProfile {
    pub row_count: usize,
    pub columns: Vec<ColumnProfile>,
}

fn as_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn as_int(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn as_float(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok().filter(|f| f.is_finite()),
        _ => None,
    }
}

fn as_date(v: &Value) -> Option<i64> {
    let s = v.as_str()?.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0).map(|t| t.and_utc().timestamp());
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.timestamp())
}

/// Narrowest type every non-null value fits, in the order boolean, integer,
/// float, date, string.
fn infer(values: &[&Value]) -> InferredType {
    if values.is_empty() {
        return InferredType::String;
    }
    if values.iter().all(|v| as_bool(v).is_some()) {
        InferredType::Boolean
    } else if values.iter().all(|v| as_int(v).is_some()) {
        InferredType::Integer
    } else if values.iter().all(|v| as_float(v).is_some()) {
        InferredType::Float
    } else if values.iter().all(|v| as_date(v).is_some()) {
        InferredType::Date
    } else {
        InferredType::String
    }
}

fn display(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn compare(t: InferredType, a: &Value, b: &Value) -> Ordering {
    match t {
        InferredType::Boolean => as_bool(a).cmp(&as_bool(b)),
        InferredType::Integer => as_int(a).cmp(&as_int(b)),
        InferredType::Float => as_float(a).partial_cmp(&as_float(b)).unwrap_or(Ordering::Equal),
        InferredType::Date => as_date(a).cmp(&as_date(b)),
        InferredType::String => display(a).cmp(&display(b)),
    }
}

fn normalized(t: InferredType, v: &Value) -> Value {
    match t {
        InferredType::Boolean => as_bool(v).map(Value::Bool),
        InferredType::Integer => as_int(v).map(Value::from),
        InferredType::Float => as_float(v).map(Value::from),
        InferredType::Date | InferredType::String => Some(Value::String(display(v))),
    }
    .unwrap_or(Value::Null)
}

/// Profiles every column. Deterministic for a given seed; each column gets
/// its own RNG stream so adding a column does not change the others' samples.
pub fn profile_table(table: &Table, seed: u64) -> Result<TableProfile, KnowledgeError> {
    if table.columns.is_empty() {
        return Err(KnowledgeError::EmptyTable);
    }
    let mut columns = Vec::with_capacity(table.columns.len());
    for (idx, name) in table.columns.iter().enumerate() {
        let values: Vec<&Value> = table.column(idx).filter(|v| !v.is_null()).collect();
        let t = infer(&values);
        let min = values.iter().copied().min_by(|a, b| compare(t, a, b)).map(|v| normalized(t, v));
        let max = values.iter().copied().max_by(|a, b| compare(t, a, b)).map(|v| normalized(t, v));
        let distinct: BTreeSet<String> = values.iter().map(|v| normalized(t, v).to_string()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let picks = sample(&mut rng, values.len(), values.len().min(SAMPLE_SIZE));
        columns.push(ColumnProfile {
            name: name.clone(),
            inferred_type: t,
            min,
            max,
            null_count: table.rows.len() - values.len(),
            distinct_count: distinct.len(),
            samples: picks.into_iter().map(|i| values[i].clone()).collect(),
        });
    }
    Ok(TableProfile { row_count: table.rows.len(), columns })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileInterpretation {
    pub table_description: String,
    /// `(column, description)` in profile order.
    pub column_descriptions: Vec<(String, String)>,
}

/// Asks the model for a description of the table and of every profiled
/// column. The reply must cover all columns.
pub fn interpret_profile(profile: &TableProfile, gateway: &Gateway) -> Result<ProfileInterpretation, KnowledgeError> {
    if profile.columns.is_empty() {
        return Err(KnowledgeError::EmptyTable);
    }
    let prompt = format!(
        "Describe the table and each of its columns in one sentence each, based on this profile.\n{}\n\
         Reply with JSON {{\"table_description\": \"...\", \"columns\": {{\"<column>\": \"...\"}}}}.",
        serde_json::to_string_pretty(profile).expect("profile serializes")
    );
    let reply = gateway.complete(&CompletionRequest::new(TAG_PROFILE, prompt))?;
    let bad = |m: &str| KnowledgeError::InvalidModelOutput(m.to_string());
    let v = extract_json(&reply).ok_or_else(|| bad("no JSON object in profile reply"))?;
    let table_description = v
        .get("table_description")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| bad("missing table_description"))?
        .to_string();
    let cols = v.get("columns").and_then(Value::as_object).ok_or_else(|| bad("missing columns"))?;
    let column_descriptions = profile
        .columns
        .iter()
        .map(|c| {
            cols.get(&c.name)
                .and_then(Value::as_str)
                .filter(|s| !s.trim().is_empty())
                .map(|d| (c.name.clone(), d.to_string()))
                .ok_or_else(|| bad(&format!("no description for column `{}`", c.name)))
        })
        .collect::<Result<_, _>>()?;
    Ok(ProfileInterpretation { table_description, column_descriptions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedProvider;
    use serde_json::json;

    fn one(col: Vec<Value>) -> ColumnProfile {
        let t = Table::new(vec!["c".into()], col.into_iter().map(|v| vec![v]).collect());
        profile_table(&t, 7).unwrap().columns.remove(0)
    }

    #[test]
    fn integers() {
        let p = one(vec![json!(1), json!(2), json!(3)]);
        assert_eq!(p.inferred_type, InferredType::Integer);
        assert_eq!((p.min, p.max, p.distinct_count), (Some(json!(1)), Some(json!(3)), 3));
    }

    #[test]
    fn all_nulls() {
        let p = one(vec![Value::Null, Value::Null]);
        assert_eq!(p.null_count, 2);
        assert!(p.min.is_none() && p.max.is_none() && p.samples.is_empty());
    }

    #[test]
    fn mixed_numeric_strings_are_float() {
        assert_eq!(one(vec![json!("1"), json!("2.5")]).inferred_type, InferredType::Float);
        assert_eq!(one(vec![json!("2024-01-01"), json!("2024-02-01")]).inferred_type, InferredType::Date);
        assert_eq!(one(vec![json!(true), json!("false")]).inferred_type, InferredType::Boolean);
    }

    #[test]
    fn empty_table_rejected() {
        assert!(matches!(profile_table(&Table::default(), 0), Err(KnowledgeError::EmptyTable)));
    }

    #[test]
    fn samples_deterministic_and_bounded() {
        let col: Vec<Value> = (0..50).map(|i| json!(i)).collect();
        let a = one(col.clone());
        assert_eq!(a.samples.len(), SAMPLE_SIZE);
        assert_eq!(a.samples, one(col).samples);
        assert_eq!(a.samples.iter().map(|v| v.to_string()).collect::<BTreeSet<_>>().len(), SAMPLE_SIZE);
    }

    #[test]
    fn interpretation_preserves_order() {
        let t = Table::new(vec!["b".into(), "a".into()], vec![vec![json!(1), json!("x")]]);
        let p = profile_table(&t, 1).unwrap();
        let reply = json!({"table_description": "t", "columns": {"a": "letters", "b": "numbers"}}).to_string();
        let gw = Gateway::scripted(ScriptedProvider::new().with_tag_responses(TAG_PROFILE, &[reply]));
        let i = interpret_profile(&p, &gw).unwrap();
        assert_eq!(i.column_descriptions, [("b".into(), "numbers".into()), ("a".into(), "letters".into())]);
    }
}
