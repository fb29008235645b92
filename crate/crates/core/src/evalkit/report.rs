//! Metrics reports: `key=value` lines plus a JSON summary.

use std::collections::BTreeMap;
use std::io::Write;

use serde_json::Value;

use crate::error::Result;

/// Named metric values kept in key order so output is stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    values: BTreeMap<String, f64>,
    pub info: BTreeMap<String, Value>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: f64) {
        self.values.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn values(&self) -> &BTreeMap<String, f64> {
        &self.values
    }

    pub fn write_kv<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in &self.values {
            writeln!(w, "{k}={v}")?;
        }
        Ok(())
    }

    /// Undefined values become `null`.
    pub fn to_json(&self) -> Value {
        let metrics: serde_json::Map<String, Value> = self
            .values
            .iter()
            .map(|(k, &v)| (k.clone(), serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)))
            .collect();
        serde_json::json!({ "metrics": metrics, "info": self.info })
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, &self.to_json())?;
        writeln!(w)?;
        Ok(())
    }
}
