//! Experiment configuration: one JSON document.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attribution::Method;
use crate::datasets::DatasetSpec;
use crate::error::{Error, Result};
use crate::metrics::{BlackBoxMetric, LipschitzOptions, MaskPolicy};
use crate::models::{Architecture, TaskKind, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub attribution: AttributionBlock,
    #[serde(default)]
    pub metrics: MetricsBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// The dataset's own generating regressor; nothing is trained.
    WhiteBox,
    Train {
        architecture: Architecture,
        #[serde(default)]
        train: TrainConfig,
        /// Leading share of the series used for training; the rest is explained.
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
}

fn default_train_fraction() -> f64 {
    0.8
}

/// A method plus the label naming its output directory and table rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Value", into = "Value")]
pub struct MethodEntry {
    pub label: String,
    pub method: Method,
}

impl TryFrom<Value> for MethodEntry {
    type Error = Error;

    fn try_from(mut value: Value) -> Result<Self> {
        let label = match value.as_object_mut().and_then(|o| o.remove("label")) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => return Err(Error::invalid(format!("method label must be a string, got {other}"))),
        };
        let method = Method::from_json(&value)?;
        Ok(Self {
            label: label.unwrap_or_else(|| method.name().to_string()),
            method,
        })
    }
}

impl From<MethodEntry> for Value {
    fn from(e: MethodEntry) -> Value {
        let mut v = serde_json::to_value(&e.method).expect("methods serialise");
        if let Some(o) = v.as_object_mut() {
            o.insert("label".into(), Value::String(e.label));
        }
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionBlock {
    pub seed: u64,
    /// Explain only the first this many eligible series.
    pub instances: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlackBoxEntry {
    pub metric: BlackBoxMetric,
    #[serde(default)]
    pub policy: MaskPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsBlock {
    pub white_box: bool,
    pub black_box: Vec<BlackBoxEntry>,
    pub lipschitz: Option<LipschitzOptions>,
    pub seed: u64,
}

impl Default for MetricsBlock {
    fn default() -> Self {
        Self {
            white_box: true,
            black_box: Vec::new(),
            lipschitz: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config is not JSON: {e}")))?;
        // Check method names first so an unknown one is reported with the
        // available list rather than as a generic parse error.
        if let Some(methods) = value.get("methods").and_then(Value::as_array) {
            for m in methods {
                if let Some(name) = m.get("method").and_then(Value::as_str) {
                    Method::check_name(name)?;
                }
            }
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::format(path, m),
            other => other,
        })
    }

    /// Replaces every block seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.dataset.set_seed(seed);
        if let ModelSpec::Train { train, .. } = &mut self.model {
            train.seed = seed;
        }
        self.attribution.seed = seed;
        self.metrics.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::invalid("config lists no attribution method"));
        }
        let mut labels = BTreeSet::new();
        for m in &self.methods {
            m.method.validate()?;
            if m.label.is_empty() || m.label.contains(['/', '\\']) || m.label.starts_with('.') {
                return Err(Error::invalid(format!("method label {:?} is not a valid directory name", m.label)));
            }
            if !labels.insert(m.label.as_str()) {
                return Err(Error::invalid(format!("method label {:?} is used twice", m.label)));
            }
        }
        match &self.model {
            ModelSpec::WhiteBox => {
                if !matches!(self.dataset, DatasetSpec::Arma(_)) {
                    return Err(Error::invalid(format!(
                        "dataset {} has no white-box model; train one instead",
                        self.dataset.name()
                    )));
                }
            }
            ModelSpec::Train {
                train, train_fraction, ..
            } => {
                train.validate()?;
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    return Err(Error::invalid(format!("train_fraction must lie in (0, 1), got {train_fraction}")));
                }
            }
        }
        if self.attribution.instances == Some(0) {
            return Err(Error::invalid("attribution.instances must be at least 1"));
        }
        for e in &self.metrics.black_box {
            e.policy.validate()?;
            if e.metric.needs_probabilities() && self.dataset.task() == TaskKind::Regression {
                return Err(Error::invalid(format!(
                    "metric {} needs class probabilities but dataset {} is a regression task",
                    e.metric.name(),
                    self.dataset.name()
                )));
            }
        }
        if let Some(l) = &self.metrics.lipschitz {
            l.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dataset": {"name": "arma", "batch": 4, "seq_len": 10, "seed": 1},
        "model": {"kind": "white_box"},
        "methods": [{"method": "integrated_gradients", "steps": 8, "label": "ig8"}, {"method": "random"}]
    }"#;

    #[test]
    fn minimal_config_parses_and_round_trips() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.methods[0].label, "ig8");
        assert_eq!(cfg.methods[1].label, "random");
        assert!(cfg.metrics.white_box);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_method_lists_the_available_ones() {
        let text = MINIMAL.replace("\"random\"", "\"fit\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("\"fit\"") && err.contains("temporal_integrated_gradients"), "{err}");
    }

    #[test]
    fn rejects_bad_combinations() {
        let dup = MINIMAL.replace("\"ig8\"", "\"random\"");
        assert!(ExperimentConfig::from_json(&dup).is_err());
        let hmm = MINIMAL.replace("\"arma\"", "\"hmm\"").replace(", \"seq_len\": 10", "");
        assert!(ExperimentConfig::from_json(&hmm).unwrap_err().to_string().contains("white-box"));
        let prob = MINIMAL.replace(
            "\"methods\"",
            "\"metrics\": {\"black_box\": [{\"metric\": \"log_odds\"}]}, \"methods\"",
        );
        assert!(ExperimentConfig::from_json(&prob).unwrap_err().to_string().contains("regression"));
        let extra = MINIMAL.replace("\"methods\"", "\"mystery\": 1, \"methods\"");
        assert!(ExperimentConfig::from_json(&extra).is_err());
    }

    #[test]
    fn seed_override_reaches_every_block() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.override_seed(42);
        assert_eq!(cfg.dataset.seed(), 42);
        assert_eq!(cfg.attribution.seed, 42);
        assert_eq!(cfg.metrics.seed, 42);
    }
}
