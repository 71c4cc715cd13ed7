//! Learned perturbation masks.
//!
//! The perturbation blends each cell with a moving average of its feature,
//! `phi(x, m) = m * x + (1 - m) * avg(x)`. In preserve mode the mask keeps
//! the prediction with as little unmasked data as possible; in delete mode
//! it moves the prediction as much as possible while deleting little. The
//! mask is learned by projected gradient descent with an L1 penalty whose
//! weight ramps up linearly over the first third of the epochs. When the
//! learned mask keeps more than `keep_ratio` of its mass on average, the
//! penalty weight is searched upwards, first by factors of 4 and then by
//! bisection, until it does not.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::attribution::{batched, predict_one, Attribution, Target};
use crate::autodiff::{Graph, NodeId, Seed, Tensor};
use crate::error::{Error, Result};
use crate::models::{Model, TaskKind};

const PENALTY_SEARCH_STEPS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamaskMode {
    #[default]
    Preserve,
    Delete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamaskOptions {
    /// Upper bound on the mean mask value.
    pub keep_ratio: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Odd moving-average width; 1 means the global time mean of each feature.
    pub window: usize,
    pub mode: DynamaskMode,
    /// Initial weight of the L1 penalty.
    pub lambda: f64,
}

impl Default for DynamaskOptions {
    fn default() -> Self {
        Self {
            keep_ratio: 0.1,
            epochs: 300,
            lr: 1.0,
            window: 5,
            mode: DynamaskMode::Preserve,
            lambda: 0.05,
        }
    }
}

impl DynamaskOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_ratio > 0.0 && self.keep_ratio < 1.0) {
            return Err(Error::invalid(format!("keep_ratio must lie in (0, 1), got {}", self.keep_ratio)));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::invalid(format!("window must be odd and >= 1, got {}", self.window)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("dynamask needs at least one epoch"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be positive"));
        }
        Ok(())
    }
}

/// Centred moving average of each feature of `x: [T, N]`, truncated at the
/// ends. A window of 1 gives the global time mean instead, since the
/// one-step average would equal `x` itself.
pub fn moving_average(x: &Tensor, window: usize) -> Tensor {
    let (t_len, n) = (x.shape()[0], x.shape()[1]);
    let mut out = Tensor::zeros(&[t_len, n]);
    for i in 0..n {
        let column: Vec<f64> = (0..t_len).map(|t| x.data()[t * n + i]).collect();
        for t in 0..t_len {
            let (lo, hi) = if window == 1 {
                (0, t_len)
            } else {
                (t.saturating_sub(window / 2), (t + window / 2 + 1).min(t_len))
            };
            out.data_mut()[t * n + i] = column[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        }
    }
    out
}

/// Fidelity graph `||g(F(a + m * d)) - reference||^2 / scale` of the mask input `m`.
struct Fidelity {
    graph: Graph,
    loss: NodeId,
}

impl Fidelity {
    fn build(model: &Model, anchor: &Tensor, direction: &Tensor, reference: &[f64]) -> Result<Self> {
        let mut g = Graph::new();
        let shape = anchor.shape().to_vec();
        let m = g.input(&shape, true);
        let d = g.constant(direction.clone());
        let a = g.constant(anchor.clone());
        let step = g.mul(m, d)?;
        let phi = g.add(a, step)?;
        let params = model.param_nodes(&mut g, false);
        let raw = model.build(&mut g, phi, &params)?;
        let out = match model.task() {
            TaskKind::Multiclass => g.softmax(raw)?,
            TaskKind::Binary => g.sigmoid(raw),
            TaskKind::Regression => raw,
        };
        let scale = reference.iter().map(|v| v * v).sum::<f64>().max(1.0);
        let neg = g.constant(Tensor::new(vec![1, reference.len()], reference.iter().map(|v| -v).collect())?);
        let diff = g.add(out, neg)?;
        let sq = g.mul(diff, diff)?;
        let total = g.sum(sq);
        let loss = g.scale(total, 1.0 / scale)?;
        Ok(Self { graph: g, loss })
    }

    fn value_and_grad(&mut self, mask: &Tensor) -> Result<(f64, Tensor)> {
        let v = self.graph.forward(std::slice::from_ref(mask), self.loss)?;
        let mut grads = self.graph.backward(self.loss, Seed::Scalar)?;
        Ok((v.item().unwrap_or(f64::NAN), grads.take(0).expect("mask requires grad")))
    }
}

fn mean(t: &Tensor) -> f64 {
    t.sum() / t.numel() as f64
}

fn learn_mask(fid: &mut Fidelity, opts: &DynamaskOptions, shape: &[usize], lambda: f64) -> Result<Tensor> {
    // Preserve minimises the fidelity loss; delete maximises it.
    let sign = match opts.mode {
        DynamaskMode::Preserve => 1.0,
        DynamaskMode::Delete => -1.0,
    };
    let ramp = (opts.epochs / 3).max(1);
    let mut mask = Tensor::full(shape, 0.5);
    for epoch in 0..opts.epochs {
        let lam = lambda * ((epoch + 1) as f64 / ramp as f64).min(1.0);
        let (loss, grad) = fid.value_and_grad(&mask).map_err(|e| match e {
            Error::NonFinite { .. } => Error::MaskDiverged { lr: opts.lr },
            other => other,
        })?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::MaskDiverged { lr: opts.lr });
        }
        for (m, g) in mask.data_mut().iter_mut().zip(grad.data()) {
            *m = (*m - opts.lr * (sign * g + lam)).clamp(0.0, 1.0);
        }
    }
    Ok(mask)
}

pub fn dynamask(model: &Model, x: &Tensor, opts: &DynamaskOptions, target: Target) -> Result<Attribution> {
    opts.validate()?;
    let reference = predict_one(model, x)?;
    let k = target.resolve(model, &reference)?;
    let avg = moving_average(x, opts.window);
    let bx = batched(x)?;
    let bavg = batched(&avg)?;
    let (anchor, direction) = match opts.mode {
        DynamaskMode::Preserve => (bavg.clone(), bx.zip_map(&bavg, |a, b| a - b)?),
        DynamaskMode::Delete => (bx.clone(), bavg.zip_map(&bx, |a, b| a - b)?),
    };
    let probs = model.probabilities(&Tensor::new(vec![1, reference.len()], reference)?);
    let mut fid = Fidelity::build(model, &anchor, &direction, probs.data())?;
    let shape = bx.shape().to_vec();

    let mut lambda = opts.lambda;
    let mut mask = learn_mask(&mut fid, opts, &shape, lambda)?;
    if mean(&mask) > opts.keep_ratio {
        let mut lo = lambda;
        let mut hi: Option<(f64, Tensor)> = None;
        for _ in 0..PENALTY_SEARCH_STEPS {
            lambda = match &hi {
                None => lo * 4.0,
                Some((h, _)) => 0.5 * (lo + h),
            };
            let candidate = learn_mask(&mut fid, opts, &shape, lambda)?;
            if mean(&candidate) <= opts.keep_ratio {
                hi = Some((lambda, candidate));
            } else {
                lo = lambda;
                mask = candidate;
            }
        }
        match hi {
            Some((_, m)) => mask = m,
            None => warn!(
                "dynamask: mean mask {:.3} still above keep_ratio {} at lambda {lambda:.3e}",
                mean(&mask),
                opts.keep_ratio
            ),
        }
    }
    Ok(Attribution::single("dynamask", mask.reshape(x.shape())?, k))
}
