//! Attribution methods behind one interface.
//!
//! Every method explains a single series `x: [T, N]` and returns an
//! [`Attribution`] of the same shape, or `[T, T, N]` in temporal mode where
//! row `t` explains the prediction at time `t`. [`Method`] is the
//! serialisable choice of method plus options used by configs and the CLI.

mod dynamask;
mod ig;
mod lof;
mod occlusion;
mod store;
mod surrogate;
mod tunnel;

use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::rng::{self, Rng};

pub use dynamask::{dynamask, moving_average, DynamaskMode, DynamaskOptions};
pub use ig::{
    integrated_gradients, temporal_integrated_gradients, IgOptions, TigOptions, TigResult,
};
pub use lof::{lof_score, similarity_score, LofIndex, LofScore, LOF_EPSILON};
pub use occlusion::{occlusion, OcclusionOptions, OcclusionStrategy};
pub use store::{load_attributions, save_attributions, AttributionMeta};
pub use surrogate::{
    kernel_shap, lime, DistanceKind, LimeKernel, LimeOptions, ShapKernel, ShapOptions,
};
pub use tunnel::{
    nonlinearities_tunnel, swapped_model, time_forward_tunnel, ActivationSwap, NonLinearitiesOptions,
    TunnelOptions,
};

/// Attribution of one series.
#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    pub method: String,
    /// `[T, N]`, or `[T, T, N]` in temporal mode.
    pub values: Tensor,
    /// Output explained at each step for time-forward methods, otherwise a single entry.
    pub targets: Vec<usize>,
    /// Normalised per-step scores, produced by temporal integrated gradients.
    pub per_step: Option<Vec<f64>>,
}

impl Attribution {
    pub(crate) fn single(method: &str, values: Tensor, target: usize) -> Self {
        Self {
            method: method.to_string(),
            values,
            targets: vec![target],
            per_step: None,
        }
    }

    pub fn is_temporal(&self) -> bool {
        self.values.rank() == 3
    }
}

/// Reference input the attribution is measured against.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSpec {
    #[default]
    Zeros,
    Constant {
        value: f64,
    },
    /// A series drawn uniformly from the background set.
    Sample,
}

impl BaselineSpec {
    pub fn validate(&self, background: Option<&Tensor>) -> Result<()> {
        match self {
            BaselineSpec::Constant { value } if !value.is_finite() => {
                Err(Error::invalid("constant baseline must be finite"))
            }
            BaselineSpec::Sample => require_background(background, "a sampled baseline").map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Baseline series of `shape = [T, N]`. Background series longer than `T`
    /// are cropped to their first `T` steps.
    pub fn draw(&self, shape: &[usize], background: Option<&Tensor>, rng: &mut Rng) -> Result<Tensor> {
        match self {
            BaselineSpec::Zeros => Ok(Tensor::zeros(shape)),
            BaselineSpec::Constant { value } => Ok(Tensor::full(shape, *value)),
            BaselineSpec::Sample => {
                let bg = require_background(background, "a sampled baseline")?;
                let j = rng.random_range(0..bg.shape()[0]);
                background_series(bg, j, shape)
            }
        }
    }

    /// True when every draw gives the same series.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, BaselineSpec::Sample)
    }
}

pub(crate) fn require_background<'a>(background: Option<&'a Tensor>, what: &str) -> Result<&'a Tensor> {
    match background {
        Some(bg) if bg.rank() == 3 && bg.shape()[0] > 0 => Ok(bg),
        _ => Err(Error::invalid(format!("{what} needs a non-empty background set"))),
    }
}

/// Series `j` of `background: [M, T', N]` cropped to `shape = [T, N]`.
pub(crate) fn background_series(background: &Tensor, j: usize, shape: &[usize]) -> Result<Tensor> {
    let (t, n) = (shape[0], shape[1]);
    let s = background.shape();
    if s[2] != n || s[1] < t {
        return Err(Error::invalid(format!(
            "background series {:?} cannot cover a [{t}, {n}] input",
            &s[1..]
        )));
    }
    let start = j * s[1] * n;
    Tensor::new(vec![t, n], background.data()[start..start + t * n].to_vec())
}

/// Which model output to explain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The model's own prediction: argmax for multiclass, output 0 otherwise.
    #[default]
    Predicted,
    Output(usize),
}

impl Target {
    /// Resolves against the raw output row of the explained input.
    pub fn resolve(self, model: &Model, outputs: &[f64]) -> Result<usize> {
        let c = model.n_outputs();
        match self {
            Target::Predicted => Ok(model.predicted_target(outputs)),
            Target::Output(k) if k < c => Ok(k),
            Target::Output(k) => Err(Error::invalid(format!(
                "target {k} out of range for a model with {c} outputs"
            ))),
        }
    }
}

/// Shared inputs of a method call besides the model and the series.
#[derive(Clone, Copy, Debug, Default)]
pub struct Context<'a> {
    /// Reference series `[M, T, N]` for sampled baselines, bootstrap and LOF.
    pub background: Option<&'a Tensor>,
    pub seed: u64,
}

/// Adds the batch axis: `[T, N] -> [1, T, N]`.
pub(crate) fn batched(x: &Tensor) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    x.reshape(&shape)
}

/// Raw outputs of the single series `x: [T, N]`.
pub(crate) fn predict_one(model: &Model, x: &Tensor) -> Result<Vec<f64>> {
    Ok(model.predict(&batched(x)?)?.into_data())
}

/// Raw outputs `[count, C]` (flattened) of `count` series of shape `[T, N]`
/// stored back to back in `series`, evaluated in bounded chunks.
pub(crate) fn predict_many(model: &Model, series: &[f64], t: usize, n: usize) -> Result<Vec<f64>> {
    const CHUNK: usize = 1024;
    let per = t * n;
    let mut out = Vec::with_capacity(series.len() / per * model.n_outputs());
    for chunk in series.chunks(CHUNK * per) {
        let batch = Tensor::new(vec![chunk.len() / per, t, n], chunk.to_vec())?;
        out.extend(model.predict(&batch)?.into_data());
    }
    Ok(out)
}

/// First `len` steps of `x: [T, N]`.
pub(crate) fn crop(x: &Tensor, len: usize) -> Result<Tensor> {
    x.narrow_leading(0, len)
}

pub(crate) fn check_series(model: &Model, x: &Tensor) -> Result<()> {
    if x.rank() != 2 || x.shape()[1] != model.n_features() {
        return Err(Error::invalid(format!(
            "expected one [T, {}] series, got {:?}",
            model.n_features(),
            x.shape()
        )));
    }
    if !x.is_finite() {
        return Err(Error::invalid("input series contains non-finite values"));
    }
    Ok(())
}

pub(crate) fn require_causal(model: &Model, method: &str) -> Result<()> {
    if model.is_causal() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{method} crops the series at every step and needs a causal (recurrent) model; \
             this feedforward model only accepts length {}",
            model.fixed_len().unwrap_or(0)
        )))
    }
}

/// Method choice with its options, as written in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    IntegratedGradients(IgOptions),
    TemporalIntegratedGradients(TigOptions),
    TimeForwardTunnel(TunnelOptions),
    Occlusion(OcclusionOptions),
    Lime(LimeOptions),
    KernelShap(ShapOptions),
    Dynamask(DynamaskOptions),
    #[serde(rename = "nonlinearities_tunnel")]
    NonLinearitiesTunnel(NonLinearitiesOptions),
    /// Uniform noise in `[0, 1)`; the reference point for truth-recovery scores.
    Random,
}

impl Method {
    pub const NAMES: [&'static str; 9] = [
        "integrated_gradients",
        "temporal_integrated_gradients",
        "time_forward_tunnel",
        "occlusion",
        "lime",
        "kernel_shap",
        "dynamask",
        "nonlinearities_tunnel",
        "random",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::IntegratedGradients(_) => "integrated_gradients",
            Method::TemporalIntegratedGradients(_) => "temporal_integrated_gradients",
            Method::TimeForwardTunnel(_) => "time_forward_tunnel",
            Method::Occlusion(_) => "occlusion",
            Method::Lime(_) => "lime",
            Method::KernelShap(_) => "kernel_shap",
            Method::Dynamask(_) => "dynamask",
            Method::NonLinearitiesTunnel(_) => "nonlinearities_tunnel",
            Method::Random => "random",
        }
    }

    /// Parses a JSON method block, rejecting unknown names with the list of known ones.
    pub fn from_json(value: &serde_json::Value) -> Result<Method> {
        let name = value
            .get("method")
            .and_then(|m| m.as_str())
            .ok_or_else(|| Error::invalid("method block needs a \"method\" name"))?;
        Self::check_name(name)?;
        serde_json::from_value(value.clone())
            .map_err(|e| Error::invalid(format!("options of method {name}: {e}")))
    }

    pub fn check_name(name: &str) -> Result<()> {
        if Self::NAMES.contains(&name) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "unknown attribution method {name:?}; available methods: {}",
                Self::NAMES.join(", ")
            )))
        }
    }

    /// Default options for `name`.
    pub fn default_for(name: &str) -> Result<Method> {
        Self::from_json(&serde_json::json!({ "method": name }))
    }

    /// Overrides the interpolation step count wherever the method has one.
    /// Returns false when no step count applies.
    pub fn set_steps(&mut self, steps: usize) -> bool {
        match self {
            Method::IntegratedGradients(o) => {
                o.steps = steps;
                true
            }
            Method::TemporalIntegratedGradients(o) => {
                o.steps = steps;
                true
            }
            Method::TimeForwardTunnel(o) => o.inner.set_steps(steps),
            Method::NonLinearitiesTunnel(o) => o.inner.set_steps(steps),
            _ => false,
        }
    }

    /// True when the output is `[T, T, N]`.
    pub fn is_temporal(&self) -> bool {
        match self {
            Method::TemporalIntegratedGradients(o) => o.temporal,
            Method::TimeForwardTunnel(o) => o.temporal,
            Method::NonLinearitiesTunnel(o) => o.inner.is_temporal(),
            _ => false,
        }
    }

    /// True when the result depends on the context seed.
    pub fn is_stochastic(&self) -> bool {
        match self {
            Method::IntegratedGradients(o) => !o.baseline.is_deterministic(),
            Method::TemporalIntegratedGradients(o) => !o.baseline.is_deterministic(),
            Method::TimeForwardTunnel(o) => o.inner.is_stochastic(),
            Method::NonLinearitiesTunnel(o) => o.inner.is_stochastic(),
            Method::Occlusion(o) => {
                !o.baseline.is_deterministic() || o.strategy.is_augmented()
            }
            Method::Lime(_) | Method::KernelShap(_) | Method::Random => true,
            Method::Dynamask(_) => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Method::IntegratedGradients(o) => o.validate(),
            Method::TemporalIntegratedGradients(o) => o.validate(),
            Method::TimeForwardTunnel(o) => o.inner.validate(),
            Method::Occlusion(o) => o.validate(),
            Method::Lime(o) => o.validate(),
            Method::KernelShap(o) => o.validate(),
            Method::Dynamask(o) => o.validate(),
            Method::NonLinearitiesTunnel(o) => o.inner.validate(),
            Method::Random => Ok(()),
        }
    }

    /// Explains `x: [T, N]`.
    pub fn attribute(&self, model: &Model, x: &Tensor, target: Target, ctx: &Context) -> Result<Attribution> {
        check_series(model, x)?;
        match self {
            Method::IntegratedGradients(o) => ig::attribute_ig(model, x, o, target, ctx),
            Method::TemporalIntegratedGradients(o) => ig::attribute_tig(model, x, o, target, ctx),
            Method::TimeForwardTunnel(o) => time_forward_tunnel(&o.inner, model, x, o.temporal, target, ctx),
            Method::Occlusion(o) => occlusion(model, x, o, target, ctx),
            Method::Lime(o) => lime(model, x, o, target, ctx),
            Method::KernelShap(o) => kernel_shap(model, x, o, target, ctx),
            Method::Dynamask(o) => dynamask(model, x, o, target),
            Method::NonLinearitiesTunnel(o) => nonlinearities_tunnel(&o.inner, model, &o.swaps, x, target, ctx),
            Method::Random => {
                let out = predict_one(model, x)?;
                let k = target.resolve(model, &out)?;
                let mut r = rng::seeded(ctx.seed);
                let data = (0..x.numel()).map(|_| r.random::<f64>()).collect();
                let values = Tensor::new(x.shape().to_vec(), data)?;
                Ok(Attribution::single("random", values, k))
            }
        }
    }
}

/// Seed of instance `b` derived from a batch seed.
pub fn instance_seed(seed: u64, b: usize) -> u64 {
    rng::substream(seed, b as u64).next_u64()
}

/// Explains every series of `inputs: [B, T, N]`, seeding instance `b` with
/// [`instance_seed`]`(seed, b)`.
pub fn attribute_batch(
    method: &Method,
    model: &Model,
    inputs: &Tensor,
    background: Option<&Tensor>,
    seed: u64,
) -> Result<Vec<Attribution>> {
    method.validate()?;
    if inputs.rank() != 3 {
        return Err(Error::invalid(format!("expected [B, T, N] inputs, got {:?}", inputs.shape())));
    }
    let (b, t, n) = (inputs.shape()[0], inputs.shape()[1], inputs.shape()[2]);
    (0..b)
        .map(|i| {
            let x = inputs.narrow_leading(i, i + 1)?.reshape(&[t, n])?;
            let ctx = Context {
                background,
                seed: instance_seed(seed, i),
            };
            method.attribute(model, &x, Target::Predicted, &ctx)
        })
        .collect()
}

/// Stacks per-instance values into `[B, ...]`.
pub fn stack_values(attributions: &[Attribution]) -> Result<Tensor> {
    let parts: Vec<Tensor> = attributions
        .iter()
        .map(|a| batched(&a.values))
        .collect::<Result<_>>()?;
    Tensor::stack_leading(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, TaskKind};

    #[test]
    fn unknown_method_lists_available() {
        let err = Method::from_json(&serde_json::json!({"method": "fit"})).unwrap_err().to_string();
        assert!(err.contains("fit"), "{err}");
        for name in Method::NAMES {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn every_name_has_defaults() {
        for name in Method::NAMES {
            let m = Method::default_for(name).unwrap();
            assert_eq!(m.name(), name);
            m.validate().unwrap();
        }
    }

    #[test]
    fn steps_override_reaches_inner_method() {
        let mut m = Method::from_json(&serde_json::json!({
            "method": "time_forward_tunnel",
            "inner": {"method": "integrated_gradients"}
        }))
        .unwrap();
        assert!(m.set_steps(8));
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["inner"]["steps"], 8);
        assert!(!Method::Random.set_steps(8));
    }

    #[test]
    fn sampled_baseline_needs_background() {
        let mut r = rng::seeded(0);
        assert!(BaselineSpec::Sample.draw(&[2, 2], None, &mut r).is_err());
        let bg = Tensor::new(vec![1, 3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = BaselineSpec::Sample.draw(&[2, 2], Some(&bg), &mut r).unwrap();
        assert_eq!(b.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn target_out_of_range() {
        let m = Model::init(
            Architecture::Rnn {
                n_features: 2,
                hidden: 3,
                n_outputs: 2,
                activation: crate::models::Activation::Tanh,
            },
            TaskKind::Multiclass,
            0,
        )
        .unwrap();
        assert!(Target::Output(2).resolve(&m, &[0.0, 1.0]).is_err());
        assert_eq!(Target::Predicted.resolve(&m, &[0.0, 1.0]).unwrap(), 1);
    }

    #[test]
    fn random_is_seeded() {
        let m = crate::datasets::arma::window_regressor(
            2,
            crate::models::SalientWindow {
                t_start: 0,
                t_end: 1,
                features: vec![0],
            },
        )
        .unwrap();
        let x = Tensor::zeros(&[3, 2]);
        let ctx = Context { background: None, seed: 5 };
        let a = Method::Random.attribute(&m, &x, Target::Predicted, &ctx).unwrap();
        let b = Method::Random.attribute(&m, &x, Target::Predicted, &ctx).unwrap();
        assert_eq!(a, b);
    }
}
