//! Differentiable predictors over `[B, T, N]` series batches.
//!
//! Every model maps a batch to its prediction at the final time step,
//! `[B, C]`. Causal models (the Elman RNN and the window regressor) accept
//! any sequence length, so cropping `x[:t]` and predicting gives the output
//! at time `t`. The MLP consumes a flattened fixed-length window.

mod serialize;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Seed, Tensor};
use crate::error::{Error, Result};
use crate::rng;

pub use serialize::{load_model, model_digest, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{accuracy, train, LossKind, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Softplus { beta: f64 },
    Sigmoid,
    Tanh,
}

/// Activation family, ignoring parameters such as the softplus `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Relu,
    Softplus,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn kind(self) -> ActivationKind {
        match self {
            Activation::Identity => ActivationKind::Identity,
            Activation::Relu => ActivationKind::Relu,
            Activation::Softplus { .. } => ActivationKind::Softplus,
            Activation::Sigmoid => ActivationKind::Sigmoid,
            Activation::Tanh => ActivationKind::Tanh,
        }
    }

    /// Builds the activation of `kind`; `beta` is only used by softplus.
    pub fn from_kind(kind: ActivationKind, beta: f64) -> Self {
        match kind {
            ActivationKind::Identity => Activation::Identity,
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Softplus => Activation::Softplus { beta },
            ActivationKind::Sigmoid => Activation::Sigmoid,
            ActivationKind::Tanh => Activation::Tanh,
        }
    }

    fn apply(self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        Ok(match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Softplus { beta } => g.softplus(x, beta)?,
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Tanh => g.tanh(x),
        })
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Self::Identity),
            "relu" => Ok(Self::Relu),
            "softplus" => Ok(Self::Softplus),
            "sigmoid" => Ok(Self::Sigmoid),
            "tanh" => Ok(Self::Tanh),
            other => Err(Error::invalid(format!(
                "unknown activation {other:?} (expected identity, relu, softplus, sigmoid or tanh)"
            ))),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Identity => "identity",
            Self::Relu => "relu",
            Self::Softplus => "softplus",
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// One logit per prediction; probability of class 1 is its sigmoid.
    Binary,
    /// One logit per class; probabilities by softmax.
    Multiclass,
    Regression,
}

/// Rectangular block of cells `[t_start, t_end) x features`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SalientWindow {
    pub t_start: usize,
    pub t_end: usize,
    pub features: Vec<usize>,
}

impl SalientWindow {
    pub fn contains(&self, t: usize, feature: usize) -> bool {
        (self.t_start..self.t_end).contains(&t) && self.features.contains(&feature)
    }

    pub fn validate(&self, seq_len: usize, n_features: usize) -> Result<()> {
        if self.t_start >= self.t_end || self.features.is_empty() {
            return Err(Error::invalid("salient window is empty"));
        }
        if self.t_end > seq_len {
            return Err(Error::invalid(format!(
                "salient window ends at {} beyond sequence length {seq_len}",
                self.t_end
            )));
        }
        if let Some(f) = self.features.iter().find(|&&f| f >= n_features) {
            return Err(Error::invalid(format!(
                "salient feature {f} out of range for {n_features} features"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    /// Feedforward net over the flattened `T * N` window.
    Mlp {
        seq_len: usize,
        n_features: usize,
        hidden: Vec<usize>,
        n_outputs: usize,
        /// One activation per hidden layer.
        activations: Vec<Activation>,
    },
    /// Single-layer Elman network with a linear head at every step.
    Rnn {
        n_features: usize,
        hidden: usize,
        n_outputs: usize,
        activation: Activation,
    },
    /// `f(x[:t]) = sum of x_ti^2 over window cells with time < t`. No parameters.
    WindowSumOfSquares {
        n_features: usize,
        window: SalientWindow,
    },
}

impl Architecture {
    pub fn n_features(&self) -> usize {
        match self {
            Architecture::Mlp { n_features, .. }
            | Architecture::Rnn { n_features, .. }
            | Architecture::WindowSumOfSquares { n_features, .. } => *n_features,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            Architecture::Mlp { n_outputs, .. } | Architecture::Rnn { n_outputs, .. } => *n_outputs,
            Architecture::WindowSumOfSquares { .. } => 1,
        }
    }

    pub fn is_causal(&self) -> bool {
        !matches!(self, Architecture::Mlp { .. })
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            Architecture::Mlp {
                seq_len,
                n_features,
                hidden,
                n_outputs,
                ..
            } => {
                let mut dims = vec![seq_len * n_features];
                dims.extend(hidden);
                dims.push(*n_outputs);
                dims.windows(2)
                    .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
                    .collect()
            }
            Architecture::Rnn {
                n_features,
                hidden,
                n_outputs,
                ..
            } => vec![
                vec![*n_features, *hidden],
                vec![*hidden, *hidden],
                vec![*hidden],
                vec![*hidden, *n_outputs],
                vec![*n_outputs],
            ],
            Architecture::WindowSumOfSquares { .. } => Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Architecture::Mlp {
                seq_len,
                n_features,
                hidden,
                n_outputs,
                activations,
            } => {
                if *seq_len == 0 || *n_features == 0 || *n_outputs == 0 || hidden.contains(&0) {
                    return Err(Error::invalid("MLP dimensions must be positive"));
                }
                if activations.len() != hidden.len() {
                    return Err(Error::invalid(format!(
                        "MLP has {} hidden layers but {} activations",
                        hidden.len(),
                        activations.len()
                    )));
                }
            }
            Architecture::Rnn {
                n_features,
                hidden,
                n_outputs,
                ..
            } => {
                if *n_features == 0 || *hidden == 0 || *n_outputs == 0 {
                    return Err(Error::invalid("RNN dimensions must be positive"));
                }
            }
            Architecture::WindowSumOfSquares { n_features, window } => {
                window.validate(usize::MAX, *n_features)?;
            }
        }
        Ok(())
    }
}

/// Architecture plus parameters. Immutable once built; `Sync`, so
/// concurrent inference is safe.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    architecture: Architecture,
    task: TaskKind,
    params: Vec<Tensor>,
}

impl Model {
    pub fn new(architecture: Architecture, task: TaskKind, params: Vec<Tensor>) -> Result<Self> {
        architecture.validate()?;
        let shapes = architecture.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::invalid(format!(
                "architecture needs {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if s.as_slice() != p.shape() {
                return Err(Error::invalid(format!(
                    "parameter {i}: expected shape {s:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        if task == TaskKind::Binary && architecture.n_outputs() != 1 {
            return Err(Error::invalid("binary task expects exactly one output logit"));
        }
        Ok(Self {
            architecture,
            task,
            params,
        })
    }

    /// Uniform Glorot initialisation from `seed`; biases start at zero.
    pub fn init(architecture: Architecture, task: TaskKind, seed: u64) -> Result<Self> {
        let mut rng = rng::seeded(seed);
        let params = architecture
            .param_shapes()
            .into_iter()
            .map(|shape| {
                let data = if shape.len() == 2 {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..shape[0] * shape[1])
                        .map(|_| rng.random_range(-limit..limit))
                        .collect()
                } else {
                    vec![0.0; shape[0]]
                };
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(architecture, task, params)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn set_params(&mut self, params: Vec<Tensor>) {
        debug_assert_eq!(params.len(), self.params.len());
        self.params = params;
    }

    pub fn n_features(&self) -> usize {
        self.architecture.n_features()
    }

    pub fn n_outputs(&self) -> usize {
        self.architecture.n_outputs()
    }

    pub fn is_causal(&self) -> bool {
        self.architecture.is_causal()
    }

    /// Required sequence length, `None` for causal models.
    pub fn fixed_len(&self) -> Option<usize> {
        match self.architecture {
            Architecture::Mlp { seq_len, .. } => Some(seq_len),
            _ => None,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.n_features() {
            return Err(Error::invalid(format!(
                "model expects [B, T, {}] input, got {s:?}",
                self.n_features()
            )));
        }
        if let Some(len) = self.fixed_len() {
            if s[1] != len {
                return Err(Error::invalid(format!(
                    "feedforward model needs sequences of length {len}, got {}; \
                     cropped inputs require a causal (recurrent) model",
                    s[1]
                )));
            }
        }
        Ok((s[0], s[1]))
    }

    /// Adds the parameters to `g`, either as trainable inputs or as constants.
    pub(crate) fn param_nodes(&self, g: &mut Graph, trainable: bool) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.input(p.shape(), true)
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    /// Final-step prediction `[B, C]` for the `[B, T, N]` node `x`.
    pub fn build(&self, g: &mut Graph, x: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let s = g.shape(x).to_vec();
        let (b, t) = (s[0], s[1]);
        match &self.architecture {
            Architecture::Mlp { activations, .. } => {
                let mut h = g.reshape(x, &[b, s[1] * s[2]])?;
                for (layer, pair) in params.chunks(2).enumerate() {
                    h = g.matmul(h, pair[0])?;
                    h = g.add(h, pair[1])?;
                    if let Some(act) = activations.get(layer) {
                        h = act.apply(g, h)?;
                    }
                }
                Ok(h)
            }
            Architecture::Rnn { .. } => {
                let steps = self.build_rnn_steps(g, x, params)?;
                Ok(*steps.last().expect("at least one time step"))
            }
            Architecture::WindowSumOfSquares { window, .. } => {
                let mut mask = Tensor::zeros(&[t, s[2]]);
                for tt in window.t_start..window.t_end.min(t) {
                    for &f in &window.features {
                        let idx = tt * s[2] + f;
                        mask.data_mut()[idx] = 1.0;
                    }
                }
                let sq = g.mul(x, x)?;
                let m = g.constant(mask);
                let masked = g.mul(sq, m)?;
                let summed = g.sum_rows(masked)?;
                g.reshape(summed, &[b, 1])
            }
        }
    }

    /// Per-step outputs of the Elman network, each `[B, C]`.
    fn build_rnn_steps(&self, g: &mut Graph, x: NodeId, params: &[NodeId]) -> Result<Vec<NodeId>> {
        let Architecture::Rnn {
            n_features,
            hidden,
            activation,
            ..
        } = &self.architecture
        else {
            unreachable!("rnn steps requested for a non-recurrent model");
        };
        let s = g.shape(x).to_vec();
        let (b, t) = (s[0], s[1]);
        let [w_ih, w_hh, b_h, w_out, b_out] = params else {
            return Err(Error::invalid("RNN expects five parameter tensors"));
        };
        let mut h = g.constant(Tensor::zeros(&[b, *hidden]));
        let mut outputs = Vec::with_capacity(t);
        for step in 0..t {
            let xt = g.slice(x, 1, step, step + 1)?;
            let xt = g.reshape(xt, &[b, *n_features])?;
            let input = g.matmul(xt, *w_ih)?;
            let recur = g.matmul(h, *w_hh)?;
            let pre = g.add(input, recur)?;
            let pre = g.add(pre, *b_h)?;
            h = activation.apply(g, pre)?;
            let out = g.matmul(h, *w_out)?;
            outputs.push(g.add(out, *b_out)?);
        }
        Ok(outputs)
    }

    /// Builds `[B, T, C]` per-step outputs (causal models only).
    pub(crate) fn build_sequence(&self, g: &mut Graph, x: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let s = g.shape(x).to_vec();
        let (b, t) = (s[0], s[1]);
        let c = self.n_outputs();
        let steps = match &self.architecture {
            Architecture::Rnn { .. } => self.build_rnn_steps(g, x, params)?,
            Architecture::WindowSumOfSquares { .. } => (1..=t)
                .map(|end| {
                    let crop = g.slice(x, 1, 0, end)?;
                    self.build(g, crop, params)
                })
                .collect::<Result<Vec<_>>>()?,
            Architecture::Mlp { .. } => {
                return Err(Error::invalid(
                    "per-step outputs need a causal model; the MLP sees the whole window",
                ))
            }
        };
        let reshaped = steps
            .into_iter()
            .map(|o| g.reshape(o, &[b, 1, c]))
            .collect::<Result<Vec<_>>>()?;
        g.concat(&reshaped, 1)
    }

    /// Raw final-step outputs (logits or regression values), `[B, C]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xi = g.input(x.shape(), false);
        let params = self.param_nodes(&mut g, false);
        let out = self.build(&mut g, xi, &params)?;
        g.forward(std::slice::from_ref(x), out)
    }

    /// Raw outputs at every step, `[B, T, C]`.
    pub fn predict_sequence(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xi = g.input(x.shape(), false);
        let params = self.param_nodes(&mut g, false);
        let out = self.build_sequence(&mut g, xi, &params)?;
        g.forward(std::slice::from_ref(x), out)
    }

    /// Final-step outputs and the gradient of `sum(weights * outputs)` with
    /// respect to the input batch.
    pub fn input_gradient(&self, x: &Tensor, weights: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xi = g.input(x.shape(), true);
        let params = self.param_nodes(&mut g, false);
        let out = self.build(&mut g, xi, &params)?;
        let value = g.forward(std::slice::from_ref(x), out)?;
        let mut grads = g.backward(out, Seed::Weights(weights.clone()))?;
        Ok((value, grads.take(0).expect("input requires grad")))
    }

    /// Gradient of output `target` of a single series `[T, N]`.
    pub fn gradient_at(&self, x: &Tensor, target: usize) -> Result<Tensor> {
        let s = x.shape();
        let batch = x.reshape(&[1, s[0], s[1]])?;
        let c = self.n_outputs();
        if target >= c {
            return Err(Error::invalid(format!("target {target} out of range for {c} outputs")));
        }
        let mut w = Tensor::zeros(&[1, c]);
        w.data_mut()[target] = 1.0;
        let (_, grad) = self.input_gradient(&batch, &w)?;
        grad.reshape(s)
    }

    /// Class probabilities (or raw values for regression) of raw outputs `[B, C]`.
    pub fn probabilities(&self, outputs: &Tensor) -> Tensor {
        match self.task {
            TaskKind::Binary => outputs.map(crate::autodiff::sigmoid),
            TaskKind::Multiclass => {
                let c = outputs.shape()[1];
                let data = outputs.data().chunks(c).flat_map(crate::autodiff::softmax_row).collect();
                Tensor::new(outputs.shape().to_vec(), data).expect("same shape")
            }
            TaskKind::Regression => outputs.clone(),
        }
    }

    /// Predicted class for one row of raw outputs; index 0 for regression.
    pub fn predicted_target(&self, row: &[f64]) -> usize {
        match self.task {
            TaskKind::Multiclass => argmax(row),
            TaskKind::Binary | TaskKind::Regression => 0,
        }
    }

    /// Activations in evaluation order.
    pub fn activations(&self) -> Vec<Activation> {
        match &self.architecture {
            Architecture::Mlp { activations, .. } => activations.clone(),
            Architecture::Rnn { activation, .. } => vec![*activation],
            Architecture::WindowSumOfSquares { .. } => Vec::new(),
        }
    }

    /// Copy with every activation of kind `from` replaced by `to`. Parameters are shared by value.
    pub fn swap_activations(&self, from: ActivationKind, to: Activation) -> Model {
        let swap = |a: &Activation| if a.kind() == from { to } else { *a };
        let mut architecture = self.architecture.clone();
        let mut touched = false;
        match &mut architecture {
            Architecture::Mlp { activations, .. } => {
                for a in activations.iter_mut() {
                    touched |= a.kind() == from;
                    *a = swap(a);
                }
            }
            Architecture::Rnn { activation, .. } => {
                touched = activation.kind() == from;
                *activation = swap(activation);
            }
            Architecture::WindowSumOfSquares { .. } => {}
        }
        if !touched {
            log::warn!("model has no {from} activation; swap is a no-op");
        }
        Model {
            architecture,
            task: self.task,
            params: self.params.clone(),
        }
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_grad;

    fn mlp(activation: Activation, seed: u64) -> Model {
        Model::init(
            Architecture::Mlp {
                seq_len: 2,
                n_features: 3,
                hidden: vec![4],
                n_outputs: 2,
                activations: vec![activation],
            },
            TaskKind::Multiclass,
            seed,
        )
        .unwrap()
    }

    fn rnn(seed: u64) -> Model {
        Model::init(
            Architecture::Rnn {
                n_features: 2,
                hidden: 5,
                n_outputs: 2,
                activation: Activation::Tanh,
            },
            TaskKind::Multiclass,
            seed,
        )
        .unwrap()
    }

    fn series(t: usize, n: usize, seed: u64) -> Tensor {
        let mut r = rng::seeded(seed);
        Tensor::new(vec![1, t, n], (0..t * n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let m = mlp(Activation::Tanh, 3);
        let x = series(2, 3, 4);
        let analytic = m.gradient_at(&x.reshape(&[2, 3]).unwrap(), 1).unwrap();
        let numeric = finite_diff_grad(|p| Ok(m.predict(p)?.data()[1]), &x, 1e-5).unwrap();
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn rnn_is_causal() {
        let m = rnn(1);
        let x = series(6, 2, 2);
        let base = m.predict_sequence(&x).unwrap();
        let mut perturbed = x.clone();
        perturbed.data_mut()[4 * 2 + 1] += 3.0;
        let after = m.predict_sequence(&perturbed).unwrap();
        let c = 2;
        assert_eq!(&base.data()[..4 * c], &after.data()[..4 * c]);
        assert_ne!(&base.data()[4 * c..], &after.data()[4 * c..]);
    }

    #[test]
    fn rnn_prediction_on_crop_matches_sequence() {
        let m = rnn(5);
        let x = series(5, 2, 6);
        let seq = m.predict_sequence(&x).unwrap();
        for t in 1..=5 {
            let crop = x.narrow(1, 0, t).unwrap();
            let p = m.predict(&crop).unwrap();
            assert_eq!(p.data(), &seq.data()[(t - 1) * 2..t * 2]);
        }
    }

    #[test]
    fn mlp_rejects_other_lengths() {
        let m = mlp(Activation::Relu, 1);
        let err = m.predict(&series(3, 3, 1)).unwrap_err();
        assert!(err.to_string().contains("causal"));
    }

    #[test]
    fn swap_and_swap_back_is_identity() {
        let m = mlp(Activation::Relu, 9);
        let soft = m.swap_activations(ActivationKind::Relu, Activation::Softplus { beta: 10.0 });
        assert_eq!(soft.params(), m.params());
        assert_eq!(m.activations(), vec![Activation::Relu]);
        let back = soft.swap_activations(ActivationKind::Softplus, Activation::Relu);
        let x = series(2, 3, 10);
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn swap_without_match_is_noop() {
        let m = mlp(Activation::Tanh, 2);
        let same = m.swap_activations(ActivationKind::Relu, Activation::Softplus { beta: 1.0 });
        let x = series(2, 3, 3);
        assert_eq!(same.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn unknown_activation_name() {
        assert!("gelu".parse::<ActivationKind>().is_err());
        assert_eq!("ReLU".parse::<ActivationKind>().unwrap(), ActivationKind::Relu);
    }

    #[test]
    fn window_regressor_zero_on_zeroed_window() {
        let window = SalientWindow {
            t_start: 1,
            t_end: 3,
            features: vec![0],
        };
        let m = Model::new(
            Architecture::WindowSumOfSquares {
                n_features: 2,
                window: window.clone(),
            },
            TaskKind::Regression,
            vec![],
        )
        .unwrap();
        let mut x = series(4, 2, 1);
        let full = m.predict(&x).unwrap().data()[0];
        let expected: f64 = (1..3).map(|t| x.data()[t * 2].powi(2)).sum();
        assert!((full - expected).abs() < 1e-14);
        for t in 1..3 {
            x.data_mut()[t * 2] = 0.0;
        }
        assert_eq!(m.predict(&x).unwrap().data()[0], 0.0);
    }
}
