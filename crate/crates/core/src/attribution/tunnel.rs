//! Wrappers that change what an inner method sees.
//!
//! The time forward tunnel runs the inner method on every crop `x[:t]` and
//! explains the model's own prediction at `t`. The nonlinearities tunnel runs
//! it on a copy of the model with some activations swapped, by default ReLU
//! for Softplus, which smooths the gradients gradient-based methods see.

use serde::{Deserialize, Serialize};

use crate::attribution::{batched, crop, require_causal, Attribution, Context, IgOptions, Method, Target};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{Activation, ActivationKind, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunnelOptions {
    pub inner: Box<Method>,
    /// Return the inner attribution of every crop as row `t` of `[T, T, N]`.
    pub temporal: bool,
}

impl Default for TunnelOptions {
    fn default() -> Self {
        Self {
            inner: Box::new(Method::IntegratedGradients(IgOptions::default())),
            temporal: false,
        }
    }
}

pub fn time_forward_tunnel(
    inner: &Method,
    model: &Model,
    x: &Tensor,
    temporal: bool,
    target: Target,
    ctx: &Context,
) -> Result<Attribution> {
    require_causal(model, "the time forward tunnel")?;
    if inner.is_temporal() {
        return Err(Error::invalid(format!(
            "the time forward tunnel needs a static inner method, {} is temporal",
            inner.name()
        )));
    }
    let (t_len, n) = (x.shape()[0], x.shape()[1]);
    let c = model.n_outputs();
    let seq = model.predict_sequence(&batched(x)?)?;
    let mut values = if temporal {
        Tensor::zeros(&[t_len, t_len, n])
    } else {
        Tensor::zeros(&[t_len, n])
    };
    let mut targets = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let k = target.resolve(model, &seq.data()[t * c..(t + 1) * c])?;
        targets.push(k);
        let a = inner.attribute(model, &crop(x, t + 1)?, Target::Output(k), ctx)?;
        if temporal {
            let dst = t * t_len * n;
            values.data_mut()[dst..dst + (t + 1) * n].copy_from_slice(a.values.data());
        } else {
            values.data_mut()[t * n..(t + 1) * n].copy_from_slice(&a.values.data()[t * n..]);
        }
    }
    Ok(Attribution {
        method: format!("time_forward_tunnel({})", inner.name()),
        values,
        targets,
        per_step: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSwap {
    pub from: ActivationKind,
    pub to: Activation,
}

impl Default for ActivationSwap {
    fn default() -> Self {
        Self {
            from: ActivationKind::Relu,
            to: Activation::Softplus { beta: 1.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonLinearitiesOptions {
    pub inner: Box<Method>,
    pub swaps: Vec<ActivationSwap>,
}

impl Default for NonLinearitiesOptions {
    fn default() -> Self {
        Self {
            inner: Box::new(Method::IntegratedGradients(IgOptions::default())),
            swaps: vec![ActivationSwap::default()],
        }
    }
}

/// `model` with every swap applied in order.
pub fn swapped_model(model: &Model, swaps: &[ActivationSwap]) -> Result<Model> {
    let mut out = model.clone();
    for s in swaps {
        if let Activation::Softplus { beta } = s.to {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::invalid(format!("softplus beta must be positive, got {beta}")));
            }
        }
        out = out.swap_activations(s.from, s.to);
    }
    Ok(out)
}

pub fn nonlinearities_tunnel(
    inner: &Method,
    model: &Model,
    swaps: &[ActivationSwap],
    x: &Tensor,
    target: Target,
    ctx: &Context,
) -> Result<Attribution> {
    let swapped = swapped_model(model, swaps)?;
    let mut a = inner.attribute(&swapped, x, target, ctx)?;
    a.method = format!("nonlinearities_tunnel({})", inner.name());
    Ok(a)
}
