use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// Named metric values plus the settings that produced them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
    pub config: serde_json::Value,
}

impl MetricReport {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            values: BTreeMap::new(),
            config,
        }
    }

    /// Rejects non-finite values so every stored value is usable downstream.
    pub fn insert(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::Undefined(format!("metric {name} is not finite ({value})")));
        }
        self.values.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Metric names in column order.
    pub fn csv_header(&self) -> Vec<String> {
        self.values.keys().cloned().collect()
    }

    /// Values in [`csv_header`](Self::csv_header) order.
    pub fn csv_row(&self) -> Vec<String> {
        self.values.values().map(|v| fmt_f64(*v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan_and_orders_columns() {
        let mut r = MetricReport::new(serde_json::json!({"seed": 1}));
        r.insert("mse", 0.5).unwrap();
        r.insert("auprc", 0.25).unwrap();
        assert!(r.insert("bad", f64::NAN).is_err());
        assert_eq!(r.csv_header(), vec!["auprc", "mse"]);
        assert_eq!(r.csv_row().len(), 2);
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
