//! Integrated gradients and its temporal variant.
//!
//! Both integrate the input gradient along the straight path from a
//! baseline to the input with the trapezoid rule on a uniform grid of
//! `steps` points. All grid points go through the model as one batch.

use serde::{Deserialize, Serialize};

use crate::attribution::{batched, crop, predict_one, require_causal, Attribution, BaselineSpec, Context, Target};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IgOptions {
    pub steps: usize,
    pub baseline: BaselineSpec,
}

impl Default for IgOptions {
    fn default() -> Self {
        Self {
            steps: 64,
            baseline: BaselineSpec::Zeros,
        }
    }
}

impl IgOptions {
    pub fn validate(&self) -> Result<()> {
        check_steps(self.steps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TigOptions {
    pub steps: usize,
    pub baseline: BaselineSpec,
    /// Divide the per-step sums by the L2 norm of the whole `[T, N]` matrix.
    pub normalize: bool,
    /// Return `[T, T, N]` with the step-`t` values on the diagonal.
    pub temporal: bool,
}

impl Default for TigOptions {
    fn default() -> Self {
        Self {
            steps: 64,
            baseline: BaselineSpec::Zeros,
            normalize: true,
            temporal: false,
        }
    }
}

impl TigOptions {
    pub fn validate(&self) -> Result<()> {
        check_steps(self.steps)
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps < 2 {
        return Err(Error::invalid(format!("integration needs at least 2 steps, got {steps}")));
    }
    Ok(())
}

fn trapezoid_weights(steps: usize) -> Vec<f64> {
    let h = 1.0 / (steps - 1) as f64;
    (0..steps)
        .map(|k| if k == 0 || k == steps - 1 { 0.5 * h } else { h })
        .collect()
}

/// Trapezoid average of the gradient of output `target` along `start + a * diff`, `a` in [0, 1].
fn path_gradient(model: &Model, start: &Tensor, diff: &Tensor, steps: usize, target: usize) -> Result<Tensor> {
    let shape = start.shape().to_vec();
    let per = start.numel();
    let c = model.n_outputs();
    let weights = trapezoid_weights(steps);
    let mut points = Vec::with_capacity(steps * per);
    let mut seed = Tensor::zeros(&[steps, c]);
    for (k, w) in weights.iter().enumerate() {
        let a = k as f64 / (steps - 1) as f64;
        points.extend(start.data().iter().zip(diff.data()).map(|(s, d)| s + a * d));
        seed.data_mut()[k * c + target] = *w;
    }
    let mut batch_shape = vec![steps];
    batch_shape.extend_from_slice(&shape);
    let (_, grad) = model.input_gradient(&Tensor::new(batch_shape, points)?, &seed)?;
    let mut avg = vec![0.0; per];
    for row in grad.data().chunks(per) {
        for (a, g) in avg.iter_mut().zip(row) {
            *a += g;
        }
    }
    Tensor::new(shape, avg)
}

fn check_target(model: &Model, target: usize) -> Result<()> {
    if target >= model.n_outputs() {
        return Err(Error::invalid(format!(
            "target {target} out of range for a model with {} outputs",
            model.n_outputs()
        )));
    }
    Ok(())
}

/// `(x - baseline) * mean gradient` along the path, for output `target`.
pub fn integrated_gradients(model: &Model, x: &Tensor, baseline: &Tensor, steps: usize, target: usize) -> Result<Tensor> {
    check_steps(steps)?;
    check_target(model, target)?;
    if x.shape() != baseline.shape() {
        return Err(Error::invalid(format!(
            "baseline {:?} does not match input {:?}",
            baseline.shape(),
            x.shape()
        )));
    }
    let diff = x.zip_map(baseline, |a, b| a - b)?;
    let avg = path_gradient(model, baseline, &diff, steps, target)?;
    diff.zip_map(&avg, |d, g| d * g)
}

pub(crate) fn attribute_ig(model: &Model, x: &Tensor, opts: &IgOptions, target: Target, ctx: &Context) -> Result<Attribution> {
    opts.validate()?;
    let baseline = opts.baseline.draw(x.shape(), ctx.background, &mut rng::seeded(ctx.seed))?;
    let k = target.resolve(model, &predict_one(model, x)?)?;
    let values = integrated_gradients(model, x, &baseline, opts.steps, k)?;
    Ok(Attribution::single("integrated_gradients", values, k))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TigResult {
    /// `TIG[t, i]`: attribution of `x[t, i]` for the prediction on `x[:t]`.
    pub values: Tensor,
    /// `sum_i TIG[t, i]`, divided by the L2 norm of `values` when normalising.
    pub per_step: Vec<f64>,
    pub targets: Vec<usize>,
}

/// For each `t`, integrated gradients of the prediction on `x[:t]` against
/// `(x_1, .., x_{t-1}, baseline_t)`, so only the last step is interpolated.
pub fn temporal_integrated_gradients(
    model: &Model,
    x: &Tensor,
    baseline: &Tensor,
    steps: usize,
    normalize: bool,
    target: Target,
) -> Result<TigResult> {
    check_steps(steps)?;
    require_causal(model, "temporal integrated gradients")?;
    if x.shape() != baseline.shape() {
        return Err(Error::invalid(format!(
            "baseline {:?} does not match input {:?}",
            baseline.shape(),
            x.shape()
        )));
    }
    let (t_len, n) = (x.shape()[0], x.shape()[1]);
    let c = model.n_outputs();
    let outputs = model.predict_sequence(&batched(x)?)?;
    let mut values = Tensor::zeros(&[t_len, n]);
    let mut targets = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let k = target.resolve(model, &outputs.data()[t * c..(t + 1) * c])?;
        targets.push(k);
        let row = t * n..(t + 1) * n;
        let delta: Vec<f64> = x.data()[row.clone()]
            .iter()
            .zip(&baseline.data()[row.clone()])
            .map(|(a, b)| a - b)
            .collect();
        if delta.iter().all(|d| *d == 0.0) {
            continue;
        }
        let mut start = crop(x, t + 1)?;
        start.data_mut()[t * n..].copy_from_slice(&baseline.data()[row.clone()]);
        let mut diff = Tensor::zeros(&[t + 1, n]);
        diff.data_mut()[t * n..].copy_from_slice(&delta);
        let avg = path_gradient(model, &start, &diff, steps, k)?;
        for (i, d) in delta.iter().enumerate() {
            values.data_mut()[t * n + i] = d * avg.data()[t * n + i];
        }
    }
    let norm = values.norm_l2();
    let per_step = values
        .data()
        .chunks(n)
        .map(|row| {
            let s: f64 = row.iter().sum();
            if normalize && norm > 0.0 {
                s / norm
            } else {
                s
            }
        })
        .collect();
    Ok(TigResult {
        values,
        per_step,
        targets,
    })
}

pub(crate) fn attribute_tig(model: &Model, x: &Tensor, opts: &TigOptions, target: Target, ctx: &Context) -> Result<Attribution> {
    opts.validate()?;
    let baseline = opts.baseline.draw(x.shape(), ctx.background, &mut rng::seeded(ctx.seed))?;
    let res = temporal_integrated_gradients(model, x, &baseline, opts.steps, opts.normalize, target)?;
    let values = if opts.temporal {
        let (t_len, n) = (x.shape()[0], x.shape()[1]);
        let mut full = Tensor::zeros(&[t_len, t_len, n]);
        for t in 0..t_len {
            let dst = (t * t_len + t) * n;
            full.data_mut()[dst..dst + n].copy_from_slice(&res.values.data()[t * n..(t + 1) * n]);
        }
        full
    } else {
        res.values
    };
    Ok(Attribution {
        method: "temporal_integrated_gradients".into(),
        values,
        targets: res.targets,
        per_step: Some(res.per_step),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, Architecture, TaskKind};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_series(t: usize, n: usize, seed: u64) -> Tensor {
        let mut r = rng::seeded(seed);
        Tensor::new(vec![t, n], (0..t * n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn linear(t: usize, n: usize, w: &[f64]) -> Model {
        Model::new(
            Architecture::Mlp {
                seq_len: t,
                n_features: n,
                hidden: vec![],
                n_outputs: 1,
                activations: vec![],
            },
            TaskKind::Regression,
            vec![Tensor::new(vec![t * n, 1], w.to_vec()).unwrap(), Tensor::vector(vec![0.3])],
        )
        .unwrap()
    }

    fn relu_mlp(t: usize, n: usize, seed: u64) -> Model {
        Model::init(
            Architecture::Mlp {
                seq_len: t,
                n_features: n,
                hidden: vec![16],
                n_outputs: 3,
                activations: vec![Activation::Relu],
            },
            TaskKind::Multiclass,
            seed,
        )
        .unwrap()
    }

    fn rnn(n: usize, seed: u64) -> Model {
        Model::init(
            Architecture::Rnn {
                n_features: n,
                hidden: 6,
                n_outputs: 2,
                activation: Activation::Tanh,
            },
            TaskKind::Multiclass,
            seed,
        )
        .unwrap()
    }

    fn output(model: &Model, x: &Tensor, k: usize) -> f64 {
        predict_one(model, x).unwrap()[k]
    }

    #[test]
    fn trapezoid_weights_sum_to_one() {
        for steps in [2, 3, 64] {
            let s: f64 = trapezoid_weights(steps).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_path_gives_zero() {
        let m = relu_mlp(3, 2, 1);
        let x = random_series(3, 2, 2);
        let a = integrated_gradients(&m, &x, &x, 16, 0).unwrap();
        assert!(a.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_model_is_exact() {
        let w = [0.5, -1.0, 2.0, 0.25];
        let m = linear(2, 2, &w);
        let x = random_series(2, 2, 3);
        let base = Tensor::full(&[2, 2], 0.4);
        for steps in [2, 5] {
            let a = integrated_gradients(&m, &x, &base, steps, 0).unwrap();
            for i in 0..4 {
                let expected = w[i] * (x.data()[i] - 0.4);
                assert!((a.data()[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn completeness_on_relu_mlp() {
        let m = relu_mlp(4, 3, 7);
        let x = random_series(4, 3, 8);
        let base = Tensor::zeros(&[4, 3]);
        let a = integrated_gradients(&m, &x, &base, 512, 1).unwrap();
        let gap = output(&m, &x, 1) - output(&m, &base, 1);
        assert!((a.sum() - gap).abs() <= 1e-3 * gap.abs(), "{} vs {gap}", a.sum());
    }

    #[test]
    fn bad_target_and_steps() {
        let m = relu_mlp(2, 2, 0);
        let x = random_series(2, 2, 0);
        let base = Tensor::zeros(&[2, 2]);
        assert!(integrated_gradients(&m, &x, &base, 16, 3).is_err());
        assert!(integrated_gradients(&m, &x, &base, 1, 0).is_err());
    }

    #[test]
    fn tig_zero_when_input_equals_baseline() {
        let m = rnn(2, 3);
        let x = random_series(5, 2, 4);
        let r = temporal_integrated_gradients(&m, &x, &x, 8, true, Target::Predicted).unwrap();
        assert!(r.values.data().iter().all(|v| *v == 0.0));
        assert!(r.per_step.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tig_per_step_completeness() {
        let m = rnn(3, 5);
        let x = random_series(6, 3, 6);
        let base = Tensor::zeros(&[6, 3]);
        let r = temporal_integrated_gradients(&m, &x, &base, 512, false, Target::Predicted).unwrap();
        for t in 0..6 {
            let k = r.targets[t];
            let xc = crop(&x, t + 1).unwrap();
            let mut bc = xc.clone();
            for i in 0..3 {
                bc.data_mut()[t * 3 + i] = 0.0;
            }
            let gap = output(&m, &xc, k) - output(&m, &bc, k);
            let s: f64 = r.values.data()[t * 3..(t + 1) * 3].iter().sum();
            assert!((s - gap).abs() <= 1e-3 * gap.abs().max(1e-9), "t={t}: {s} vs {gap}");
            assert!((r.per_step[t] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn tig_on_memoryless_rnn_is_linear() {
        // Identity recurrence with zero hidden-to-hidden weights: output at t is w . x_t + const.
        let w_ih = Tensor::new(vec![2, 2], vec![1.0, 0.5, -2.0, 1.5]).unwrap();
        let w_out = Tensor::new(vec![2, 1], vec![0.7, -0.3]).unwrap();
        let m = Model::new(
            Architecture::Rnn {
                n_features: 2,
                hidden: 2,
                n_outputs: 1,
                activation: Activation::Identity,
            },
            TaskKind::Regression,
            vec![w_ih, Tensor::zeros(&[2, 2]), Tensor::vector(vec![0.1, 0.2]), w_out, Tensor::vector(vec![0.0])],
        )
        .unwrap();
        let w = [1.0 * 0.7 + 0.5 * -0.3, -2.0 * 0.7 + 1.5 * -0.3];
        let x = random_series(4, 2, 9);
        let base = Tensor::full(&[4, 2], -0.2);
        let r = temporal_integrated_gradients(&m, &x, &base, 2, false, Target::Predicted).unwrap();
        for t in 0..4 {
            for i in 0..2 {
                let expected = w[i] * (x.at(&[t, i]) + 0.2);
                assert!((r.values.at(&[t, i]) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tig_rejects_feedforward() {
        let m = relu_mlp(3, 2, 0);
        let x = random_series(3, 2, 0);
        let err = temporal_integrated_gradients(&m, &x, &x, 8, true, Target::Predicted).unwrap_err();
        assert!(err.to_string().contains("causal"), "{err}");
    }

    #[test]
    fn tig_normalised_vector_uses_l2_norm() {
        let m = rnn(2, 1);
        let x = random_series(4, 2, 1);
        let base = Tensor::zeros(&[4, 2]);
        let raw = temporal_integrated_gradients(&m, &x, &base, 16, false, Target::Predicted).unwrap();
        let norm = temporal_integrated_gradients(&m, &x, &base, 16, true, Target::Predicted).unwrap();
        let l2 = raw.values.norm_l2();
        for (a, b) in raw.per_step.iter().zip(&norm.per_step) {
            assert!((a / l2 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_mode_is_diagonal() {
        let m = rnn(2, 2);
        let x = random_series(4, 2, 2);
        let opts = TigOptions {
            steps: 8,
            temporal: true,
            ..TigOptions::default()
        };
        let a = attribute_tig(&m, &x, &opts, Target::Predicted, &Context::default()).unwrap();
        assert_eq!(a.values.shape(), &[4, 4, 2]);
        for t in 0..4 {
            for tp in 0..4 {
                if tp != t {
                    assert!((0..2).all(|i| a.values.at(&[t, tp, i]) == 0.0));
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ig_is_finite_and_complete_on_smooth_models(seed in 0u64..1000, steps in 2usize..40) {
            let m = rnn(2, seed);
            let x = random_series(3, 2, seed + 1);
            let base = Tensor::zeros(&[3, 2]);
            let a = integrated_gradients(&m, &x, &base, steps, 0).unwrap();
            prop_assert!(a.is_finite());
            let gap = output(&m, &x, 0) - output(&m, &base, 0);
            // Trapezoid error on a smooth path shrinks like 1/steps^2.
            let bound = 2.0 / (steps * steps) as f64 + 1e-9;
            prop_assert!((a.sum() - gap).abs() <= bound * (1.0 + gap.abs()) * 10.0);
        }
    }
}
