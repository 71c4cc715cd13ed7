//! Synthetic series with known saliency.
//!
//! * [`arma`]: independent ARMA features scored by a white-box window regressor.
//! * [`hmm`]: two-state hidden Markov model where the state picks the salient feature.
//! * [`hawkes`]: multivariate Hawkes process binned into counts, with time-dependent truth.

pub mod arma;
pub mod hawkes;
pub mod hmm;
mod store;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{Model, TaskKind};

pub use arma::{generate_arma, ArmaConfig, ArmaDataset};
pub use hawkes::{
    generate_hawkes, hawkes_intensity, simulate_hawkes, Event, HawkesConfig, HawkesDataset,
    HawkesParams,
};
pub use hmm::{generate_hmm, HmmConfig, HmmDataset};
pub use store::{load_dataset, save_dataset, DatasetMeta};

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    /// One label per series.
    Static(Vec<f64>),
    /// One label per series and step, `[B, T]`.
    Temporal(Tensor),
}

impl Labels {
    pub fn values(&self) -> &[f64] {
        match self {
            Labels::Static(v) => v,
            Labels::Temporal(t) => t.data(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Labels {
        match self {
            Labels::Static(v) => Labels::Static(indices.iter().map(|&i| v[i]).collect()),
            Labels::Temporal(t) => {
                let len = t.shape()[1];
                let data = indices
                    .iter()
                    .flat_map(|&i| t.data()[i * len..(i + 1) * len].iter().copied())
                    .collect();
                Labels::Temporal(
                    Tensor::new(vec![indices.len(), len], data).expect("row selection"),
                )
            }
        }
    }
}

/// Batch of series `[B, T, N]` with optional labels and reference set.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesBatch {
    pub inputs: Tensor,
    pub labels: Option<Labels>,
    /// Reference series `[M, T, N]` for bootstrap baselines and LOF.
    pub background: Option<Tensor>,
}

impl SeriesBatch {
    pub fn new(inputs: Tensor, labels: Option<Labels>, background: Option<Tensor>) -> Result<Self> {
        if inputs.rank() != 3 {
            return Err(Error::invalid(format!(
                "series batch must be [B, T, N], got {:?}",
                inputs.shape()
            )));
        }
        let (b, t) = (inputs.shape()[0], inputs.shape()[1]);
        match &labels {
            Some(Labels::Static(v)) if v.len() != b => {
                return Err(Error::invalid(format!("{} static labels for {b} series", v.len())))
            }
            Some(Labels::Temporal(l)) if l.shape() != [b, t] => {
                return Err(Error::invalid(format!(
                    "temporal labels {:?} do not match [{b}, {t}]",
                    l.shape()
                )))
            }
            _ => {}
        }
        if let Some(bg) = &background {
            if bg.rank() != 3 || bg.shape()[1..] != inputs.shape()[1..] {
                return Err(Error::invalid(format!(
                    "background {:?} does not match series shape {:?}",
                    bg.shape(),
                    &inputs.shape()[1..]
                )));
            }
        }
        Ok(Self {
            inputs,
            labels,
            background,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq_len(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn n_features(&self) -> usize {
        self.inputs.shape()[2]
    }

    /// Series `b` as `[T, N]`.
    pub fn series(&self, b: usize) -> Tensor {
        let (t, n) = (self.seq_len(), self.n_features());
        self.inputs
            .narrow_leading(b, b + 1)
            .and_then(|s| s.reshape(&[t, n]))
            .expect("series index in range")
    }

    /// Sub-batch of the given series as `[len, T, N]`.
    pub fn select(&self, indices: &[usize]) -> Result<Tensor> {
        let per = self.seq_len() * self.n_features();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("series {i} out of range")));
            }
            data.extend_from_slice(&self.inputs.data()[i * per..(i + 1) * per]);
        }
        Tensor::new(vec![indices.len(), self.seq_len(), self.n_features()], data)
    }

    /// Splits off series `range` with their labels; the background is kept.
    pub fn subset(&self, indices: &[usize]) -> Result<SeriesBatch> {
        Ok(SeriesBatch {
            inputs: self.select(indices)?,
            labels: self.labels.as_ref().map(|l| l.select(indices)),
            background: self.background.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthKind {
    Binary,
    Real,
}

/// Ground-truth saliency, `[B, T, N]` or temporal `[B, T, T, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyTruth {
    pub values: Tensor,
    pub kind: TruthKind,
}

impl SaliencyTruth {
    pub fn is_temporal(&self) -> bool {
        self.values.rank() == 4
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Truth of instance `b` without the batch axis.
    pub fn instance(&self, b: usize) -> Tensor {
        let shape = self.values.shape()[1..].to_vec();
        self.values
            .narrow_leading(b, b + 1)
            .and_then(|s| s.reshape(&shape))
            .expect("instance index in range")
    }

    pub fn subset(&self, indices: &[usize]) -> SaliencyTruth {
        let per: usize = self.values.shape()[1..].iter().product();
        let data = indices
            .iter()
            .flat_map(|&i| self.values.data()[i * per..(i + 1) * per].iter().copied())
            .collect();
        let mut shape = self.values.shape().to_vec();
        shape[0] = indices.len();
        SaliencyTruth {
            values: Tensor::new(shape, data).expect("subset shape"),
            kind: self.kind,
        }
    }
}

/// Dataset choice plus its parameters, as named in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DatasetSpec {
    Arma(ArmaConfig),
    Hmm(HmmConfig),
    Hawkes(HawkesConfig),
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Arma(_) => "arma",
            DatasetSpec::Hmm(_) => "hmm",
            DatasetSpec::Hawkes(_) => "hawkes",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            DatasetSpec::Arma(c) => c.seed,
            DatasetSpec::Hmm(c) => c.seed,
            DatasetSpec::Hawkes(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            DatasetSpec::Arma(c) => c.seed = seed,
            DatasetSpec::Hmm(c) => c.seed = seed,
            DatasetSpec::Hawkes(c) => c.seed = seed,
        }
    }

    /// Task the labels of this dataset pose.
    pub fn task(&self) -> TaskKind {
        match self {
            DatasetSpec::Arma(_) => TaskKind::Regression,
            DatasetSpec::Hmm(_) | DatasetSpec::Hawkes(_) => TaskKind::Multiclass,
        }
    }
}

/// A generated dataset in the shape every pipeline stage consumes.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub batch: SeriesBatch,
    pub truth: SaliencyTruth,
    /// The generating regressor, when the dataset has one.
    pub white_box: Option<Model>,
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    Ok(match spec {
        DatasetSpec::Arma(cfg) => {
            let d = generate_arma(cfg)?;
            Dataset {
                spec: spec.clone(),
                batch: d.batch,
                truth: d.truth,
                white_box: Some(d.model),
            }
        }
        DatasetSpec::Hmm(cfg) => {
            let d = generate_hmm(cfg)?;
            Dataset {
                spec: spec.clone(),
                batch: d.batch,
                truth: d.truth,
                white_box: None,
            }
        }
        DatasetSpec::Hawkes(cfg) => {
            let d = generate_hawkes(cfg)?;
            Dataset {
                spec: spec.clone(),
                batch: d.batch,
                truth: d.truth,
                white_box: None,
            }
        }
    })
}
