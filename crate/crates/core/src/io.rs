//! Model JSON and table CSV formats.
//!
//! A model file is a JSON object
//!
//! ```json
//! {"K": 2, "classes": [{"weight": 0.5, "probs": [0.2475, 0.2475]},
//!                      {"weight": 0.5, "probs": [0.7425, 0.7425]}]}
//! ```
//!
//! A table file is CSV with header `pattern,count` and one row per observable
//! pattern, written as a `K`-character `0`/`1` string in source order. Rows
//! may come in any order but every pattern of `H*` must appear exactly once.
//!
//! Both readers report the first violation together with where it occurred.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::model::{ContingencyTable, LatentClassModel};
use crate::pattern::{InclusionPattern, PatternOrder};

pub fn parse_model_json(text: &str) -> Result<LatentClassModel> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::model("$", e.to_string()))?;
    model_from_value(&value)
}

/// Validates a parsed JSON value against the model format.
pub fn model_from_value(value: &Value) -> Result<LatentClassModel> {
    let root = value
        .as_object()
        .ok_or_else(|| Error::model("$", "expected a JSON object"))?;
    reject_unknown(root, &["K", "classes"], "")?;

    let k = root
        .get("K")
        .ok_or_else(|| Error::model("K", "missing field"))?
        .as_u64()
        .ok_or_else(|| Error::model("K", "expected a nonnegative integer"))?;
    PatternOrder::new(usize::try_from(k).unwrap_or(usize::MAX)).map_err(|e| Error::model("K", e.to_string()))?;
    let k = k as usize;

    let classes = root
        .get("classes")
        .ok_or_else(|| Error::model("classes", "missing field"))?
        .as_array()
        .ok_or_else(|| Error::model("classes", "expected an array"))?;
    if classes.is_empty() {
        return Err(Error::model("classes", "at least one class is required"));
    }

    let mut weights = Vec::with_capacity(classes.len());
    let mut rows = Vec::with_capacity(classes.len());
    for (j, class) in classes.iter().enumerate() {
        let path = format!("classes[{j}]");
        let obj = class
            .as_object()
            .ok_or_else(|| Error::model(&path, "expected an object"))?;
        reject_unknown(obj, &["weight", "probs"], &format!("{path}."))?;
        let weight = obj
            .get("weight")
            .ok_or_else(|| Error::model(format!("{path}.weight"), "missing field"))?
            .as_f64()
            .ok_or_else(|| Error::model(format!("{path}.weight"), "expected a number"))?;
        let probs = obj
            .get("probs")
            .ok_or_else(|| Error::model(format!("{path}.probs"), "missing field"))?
            .as_array()
            .ok_or_else(|| Error::model(format!("{path}.probs"), "expected an array"))?;
        if probs.len() != k {
            return Err(Error::model(
                format!("{path}.probs"),
                format!("expected K={k} probabilities, found {}", probs.len()),
            ));
        }
        let row = probs
            .iter()
            .enumerate()
            .map(|(s, p)| {
                p.as_f64()
                    .ok_or_else(|| Error::model(format!("{path}.probs[{s}]"), "expected a number"))
            })
            .collect::<Result<Vec<f64>>>()?;
        weights.push(weight);
        rows.push(row);
    }
    LatentClassModel::new(weights, rows)
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], prefix: &str) -> Result<()> {
    match obj.keys().find(|key| !allowed.contains(&key.as_str())) {
        Some(key) => Err(Error::model(format!("{prefix}{key}"), "unknown field")),
        None => Ok(()),
    }
}

pub fn model_to_value(model: &LatentClassModel) -> Value {
    let classes: Vec<Value> = (0..model.classes())
        .map(|j| json!({"weight": model.weights()[j], "probs": model.class_probs(j)}))
        .collect();
    json!({"K": model.sources(), "classes": classes})
}

pub fn model_to_json(model: &LatentClassModel) -> String {
    serde_json::to_string_pretty(&model_to_value(model)).expect("model values are finite")
}

pub fn read_model(path: impl AsRef<Path>) -> Result<LatentClassModel> {
    parse_model_json(&fs::read_to_string(path)?)
}

pub fn write_model(path: impl AsRef<Path>, model: &LatentClassModel) -> Result<()> {
    fs::write(path, model_to_json(model) + "\n")?;
    Ok(())
}

pub fn parse_table_csv(text: &str) -> Result<ContingencyTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| Error::table("line 1", e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "pattern" || &headers[1] != "count" {
        return Err(Error::table("line 1", "header must be exactly \"pattern,count\""));
    }

    let mut order: Option<PatternOrder> = None;
    let mut counts: Vec<Option<u64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::table(format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let at = format!("line {line}");

        let pattern = InclusionPattern::parse(&record[0]).map_err(|e| Error::table(&at, e.to_string()))?;
        let current = match order {
            Some(o) => {
                if pattern.sources() != o.sources() {
                    return Err(Error::table(
                        &at,
                        format!("pattern {:?} has {} sources, expected {}", &record[0], pattern.sources(), o.sources()),
                    ));
                }
                o
            }
            None => {
                let o = PatternOrder::new(pattern.sources()).map_err(|e| Error::table(&at, e.to_string()))?;
                counts = vec![None; o.observed_len()];
                order = Some(o);
                o
            }
        };
        debug_assert_eq!(current.sources(), pattern.sources());
        let idx = pattern
            .observed_index()
            .ok_or_else(|| Error::table(&at, "the all-zero pattern is unobservable and must not appear"))?;
        let count: u64 = record[1]
            .parse()
            .map_err(|_| Error::table(&at, format!("count {:?} is not a nonnegative integer", &record[1])))?;
        if counts[idx].replace(count).is_some() {
            return Err(Error::table(&at, format!("pattern {pattern} appears more than once")));
        }
    }

    let order = order.ok_or_else(|| Error::table("line 2", "table has no rows"))?;
    let counts = counts
        .into_iter()
        .zip(order.observed())
        .map(|(c, h)| c.ok_or_else(|| Error::table("end of file", format!("pattern {h} is missing"))))
        .collect::<Result<Vec<u64>>>()?;
    ContingencyTable::new(counts)
}

pub fn table_to_csv(table: &ContingencyTable) -> String {
    let mut out = String::from("pattern,count\n");
    for (h, c) in table.order().observed().zip(table.counts()) {
        out.push_str(&format!("{h},{c}\n"));
    }
    out
}

pub fn read_table(path: impl AsRef<Path>) -> Result<ContingencyTable> {
    parse_table_csv(&fs::read_to_string(path)?)
}

pub fn write_table(path: impl AsRef<Path>, table: &ContingencyTable) -> Result<()> {
    fs::write(path, table_to_csv(table))?;
    Ok(())
}
