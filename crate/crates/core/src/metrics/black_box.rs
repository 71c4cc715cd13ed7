//! Metrics from masking the most or least important cells.
//!
//! Cells are ranked once by `(value desc, (t, i) asc)`. The top side selects
//! the first `k = ceil(fraction * T * N)` cells of that ranking and the bottom
//! side the last `k`. In remove mode the selected cells are masked; in keep
//! mode everything else is. Draw `d` uses its own stream: a baseline draw,
//! then one Gaussian noise value per cell, so two policies with the same seed
//! and mask perturb identically. Per-draw scores are averaged with weights
//! normalised to sum to one.

use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attribution::{
    background_series, instance_seed, predict_many, predict_one, require_background, BaselineSpec, DistanceKind,
    LofIndex,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{argmax, Model, TaskKind};
use crate::rng;

/// Clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlackBoxMetric {
    Accuracy,
    Comprehensiveness,
    CrossEntropy,
    LogOdds,
    Mae,
    Mse,
    Sufficiency,
}

impl BlackBoxMetric {
    pub const ALL: [BlackBoxMetric; 7] = [
        Self::Accuracy,
        Self::Comprehensiveness,
        Self::CrossEntropy,
        Self::LogOdds,
        Self::Mae,
        Self::Mse,
        Self::Sufficiency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::Comprehensiveness => "comprehensiveness",
            Self::CrossEntropy => "cross_entropy",
            Self::LogOdds => "log_odds",
            Self::Mae => "mae",
            Self::Mse => "mse",
            Self::Sufficiency => "sufficiency",
        }
    }

    /// Needs class probabilities, so not defined for regression.
    pub fn needs_probabilities(self) -> bool {
        !matches!(self, Self::Mae | Self::Mse)
    }
}

impl FromStr for BlackBoxMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|m| m.name()).collect();
            Error::invalid(format!("unknown metric {s:?}; available: {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    #[default]
    Top,
    Bottom,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Remove,
    Keep,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFn {
    #[default]
    None,
    /// `exp(-d^2 / width^2)` of the distance between perturbed and original input.
    LimeWeight {
        #[serde(default)]
        distance: DistanceKind,
        /// Defaults to `0.25 * sqrt(T * N)`.
        #[serde(default)]
        kernel_width: Option<f64>,
    },
    /// Similarity score of the perturbed input against the background.
    LofWeight {
        #[serde(default = "default_lof_k")]
        k: usize,
    },
}

fn default_lof_k() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskPolicy {
    pub fraction: f64,
    pub side: Side,
    pub mode: MaskMode,
    pub baseline: BaselineSpec,
    pub noise: f64,
    pub draws: usize,
    pub weight_fn: WeightFn,
    /// Decision threshold on the positive-class probability of binary models.
    pub threshold: f64,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            fraction: 0.2,
            side: Side::Top,
            mode: MaskMode::Remove,
            baseline: BaselineSpec::Zeros,
            noise: 0.0,
            draws: 1,
            weight_fn: WeightFn::None,
            threshold: 0.5,
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!("fraction must lie in (0, 1], got {}", self.fraction)));
        }
        if self.draws == 0 {
            return Err(Error::invalid("draws must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise must be >= 0, got {}", self.noise)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        match self.weight_fn {
            WeightFn::LimeWeight { kernel_width: Some(w), .. } if !(w > 0.0 && w.is_finite()) => {
                Err(Error::invalid("kernel_width must be positive"))
            }
            WeightFn::LofWeight { k: 0 } => Err(Error::invalid("lof weight needs k >= 1")),
            _ => Ok(()),
        }
    }

    /// Short label such as `remove_top_0.2`, used as the policy column of tables.
    pub fn label(&self) -> String {
        let mode = match self.mode {
            MaskMode::Remove => "remove",
            MaskMode::Keep => "keep",
        };
        let side = match self.side {
            Side::Top => "top",
            Side::Bottom => "bottom",
        };
        format!("{mode}_{side}_{}", self.fraction)
    }
}

/// Static view of an attribution: `[T, N]`, or the last row of `[T, T, N]`.
pub fn static_view(attr: &Tensor) -> Result<Tensor> {
    match attr.rank() {
        2 => Ok(attr.clone()),
        3 => {
            let t = attr.shape()[0];
            attr.narrow(0, t - 1, t)?.reshape(&attr.shape()[1..])
        }
        _ => Err(Error::invalid(format!("expected a [T, N] or [T, T, N] attribution, got {:?}", attr.shape()))),
    }
}

/// Number of cells a fraction selects out of `n`.
pub fn cell_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Cells in rank order: descending value, ties by ascending flat index.
pub fn ranking(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Which cells of `attr` the policy replaces.
pub fn masked_cells(attr: &Tensor, policy: &MaskPolicy) -> Result<Vec<bool>> {
    policy.validate()?;
    let a = static_view(attr)?;
    if !a.is_finite() {
        return Err(Error::invalid("attribution contains non-finite values"));
    }
    let n = a.numel();
    let k = cell_count(policy.fraction, n);
    if k == 0 {
        return Err(Error::invalid(format!("fraction {} selects no cell out of {n}", policy.fraction)));
    }
    let order = ranking(a.data());
    let chosen = match policy.side {
        Side::Top => &order[..k],
        Side::Bottom => &order[n - k..],
    };
    let mut selected = vec![false; n];
    for &c in chosen {
        selected[c] = true;
    }
    if policy.mode == MaskMode::Keep {
        selected.iter_mut().for_each(|s| *s = !*s);
    }
    Ok(selected)
}

/// Perturbed copies of `x: [T, N]`, one per draw.
pub fn perturbed_inputs(
    x: &Tensor,
    masked: &[bool],
    policy: &MaskPolicy,
    background: Option<&Tensor>,
    seed: u64,
) -> Result<Vec<Tensor>> {
    policy.validate()?;
    if masked.len() != x.numel() {
        return Err(Error::invalid(format!("mask has {} cells for a {:?} input", masked.len(), x.shape())));
    }
    let noise = Normal::new(0.0, policy.noise).map_err(|e| Error::invalid(e.to_string()))?;
    (0..policy.draws)
        .map(|d| {
            let mut r = rng::substream(seed, d as u64);
            let base = policy.baseline.draw(x.shape(), background, &mut r)?;
            let mut out = x.clone();
            for (cell, v) in out.data_mut().iter_mut().enumerate() {
                let eps = if policy.noise > 0.0 { noise.sample(&mut r) } else { 0.0 };
                if masked[cell] {
                    *v = base.data()[cell] + eps;
                }
            }
            Ok(out)
        })
        .collect()
}

/// Class probabilities of one raw output row; `[1 - s, s]` for binary models.
fn class_probs(model: &Model, row: &[f64]) -> Vec<f64> {
    match model.task() {
        TaskKind::Binary => {
            let s = crate::autodiff::sigmoid(row[0]);
            vec![1.0 - s, s]
        }
        TaskKind::Multiclass => crate::autodiff::softmax_row(row),
        TaskKind::Regression => row.to_vec(),
    }
}

fn decide(model: &Model, probs: &[f64], threshold: f64) -> usize {
    match model.task() {
        TaskKind::Binary => usize::from(probs[1] >= threshold),
        _ => argmax(probs),
    }
}

fn draw_weights(
    x: &Tensor,
    perturbed: &[Tensor],
    weight_fn: WeightFn,
    background: Option<&Tensor>,
) -> Result<Vec<f64>> {
    let w: Vec<f64> = match weight_fn {
        WeightFn::None => vec![1.0; perturbed.len()],
        WeightFn::LimeWeight { distance, kernel_width } => {
            let width = kernel_width.unwrap_or(0.25 * (x.numel() as f64).sqrt());
            perturbed
                .iter()
                .map(|p| (-(distance.distance(p.data(), x.data()) / width).powi(2)).exp())
                .collect()
        }
        WeightFn::LofWeight { k } => {
            let bg = require_background(background, "the lof weight")?;
            let points = (0..bg.shape()[0])
                .map(|j| background_series(bg, j, x.shape()).map(Tensor::into_data))
                .collect::<Result<Vec<_>>>()?;
            let index = LofIndex::new(points, k)?;
            perturbed.iter().map(|p| index.similarity(p.data())).collect::<Result<_>>()?
        }
    };
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Undefined(format!("draw weights sum to {total}")));
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Metric of `x` with the given cells masked. `label` is the reference class
/// for accuracy; the model's prediction on `x` is used without one.
#[allow(clippy::too_many_arguments)]
pub fn black_box_masked(
    metric: BlackBoxMetric,
    model: &Model,
    x: &Tensor,
    masked: &[bool],
    policy: &MaskPolicy,
    label: Option<usize>,
    background: Option<&Tensor>,
    seed: u64,
) -> Result<f64> {
    if metric.needs_probabilities() && model.task() == TaskKind::Regression {
        return Err(Error::invalid(format!(
            "{} needs class probabilities but the model is a regressor",
            metric.name()
        )));
    }
    let perturbed = perturbed_inputs(x, masked, policy, background, seed)?;
    let weights = draw_weights(x, &perturbed, policy.weight_fn, background)?;
    let original = predict_one(model, x)?;
    let p = class_probs(model, &original);
    let c = decide(model, &p, 0.5);
    let reference = match label {
        Some(l) if l >= p.len() => {
            return Err(Error::invalid(format!("label {l} out of range for {} classes", p.len())))
        }
        Some(l) => l,
        None => decide(model, &p, policy.threshold),
    };
    let (t, n) = (x.shape()[0], x.shape()[1]);
    let flat: Vec<f64> = perturbed.iter().flat_map(|p| p.data().iter().copied()).collect();
    let outputs = predict_many(model, &flat, t, n)?;
    let width = model.n_outputs();
    let clamp = |v: f64| v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let mut total = 0.0;
    for (row, w) in outputs.chunks(width).zip(&weights) {
        let q = class_probs(model, row);
        let score = match metric {
            BlackBoxMetric::Accuracy => f64::from(u8::from(decide(model, &q, policy.threshold) == reference)),
            BlackBoxMetric::Comprehensiveness | BlackBoxMetric::Sufficiency => p[c] - q[c],
            BlackBoxMetric::CrossEntropy => p
                .iter()
                .zip(&q)
                .filter(|(a, _)| **a > 0.0)
                .map(|(a, b)| a * (clamp(*a).ln() - clamp(*b).ln()))
                .sum(),
            BlackBoxMetric::LogOdds => clamp(q[c]).ln() - clamp(p[c]).ln(),
            BlackBoxMetric::Mae => {
                row.iter().zip(&original).map(|(a, b)| (a - b).abs()).sum::<f64>() / width as f64
            }
            BlackBoxMetric::Mse => {
                row.iter().zip(&original).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / width as f64
            }
        };
        total += w * score;
    }
    Ok(total)
}

/// Metric of one instance under a policy.
#[allow(clippy::too_many_arguments)]
pub fn black_box_metric(
    metric: BlackBoxMetric,
    model: &Model,
    x: &Tensor,
    attr: &Tensor,
    policy: &MaskPolicy,
    label: Option<usize>,
    background: Option<&Tensor>,
    seed: u64,
) -> Result<f64> {
    let a = static_view(attr)?;
    if a.shape() != x.shape() {
        return Err(Error::invalid(format!(
            "attribution shape {:?} does not match input shape {:?}",
            attr.shape(),
            x.shape()
        )));
    }
    let masked = masked_cells(&a, policy)?;
    black_box_masked(metric, model, x, &masked, policy, label, background, seed)
}

/// Mean over the series of `inputs: [B, T, N]` and `attrs: [B, ...]`, instance
/// `b` seeded with [`instance_seed`]`(seed, b)`.
#[allow(clippy::too_many_arguments)]
pub fn black_box_batch(
    metric: BlackBoxMetric,
    model: &Model,
    inputs: &Tensor,
    attrs: &Tensor,
    policy: &MaskPolicy,
    labels: Option<&[usize]>,
    background: Option<&Tensor>,
    seed: u64,
) -> Result<f64> {
    if inputs.rank() != 3 || attrs.shape().first() != inputs.shape().first() {
        return Err(Error::invalid(format!(
            "attributions {:?} do not match inputs {:?}",
            attrs.shape(),
            inputs.shape()
        )));
    }
    let b = inputs.shape()[0];
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(l) = labels {
        if l.len() != b {
            return Err(Error::invalid(format!("{} labels for {b} series", l.len())));
        }
    }
    let per_x = inputs.numel() / b;
    let per_a = attrs.numel() / b;
    let mut sum = 0.0;
    for i in 0..b {
        let x = Tensor::new(inputs.shape()[1..].to_vec(), inputs.data()[i * per_x..(i + 1) * per_x].to_vec())?;
        let a = Tensor::new(attrs.shape()[1..].to_vec(), attrs.data()[i * per_a..(i + 1) * per_a].to_vec())?;
        let label = labels.map(|l| l[i]);
        sum += black_box_metric(metric, model, &x, &a, policy, label, background, instance_seed(seed, i))?;
    }
    Ok(sum / b as f64)
}
