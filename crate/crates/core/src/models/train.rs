use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Seed, Tensor};
use crate::datasets::{Labels, SeriesBatch};
use crate::error::{Error, Result};
use crate::models::{argmax, Model, TaskKind};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.1,
            batch_size: 32,
            loss: LossKind::CrossEntropy,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: Model,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Mini-batch SGD with a fixed learning rate.
///
/// Temporal labels (`[B, T]`) train every step of a causal model; static
/// labels train the final-step prediction.
pub fn train(model: &Model, data: &SeriesBatch, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid("training needs labels"))?;
    check_labels(model, data, labels, cfg.loss)?;

    let b = data.len();
    let mut current = model.clone();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..b).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::substream(cfg.seed, epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.select(chunk)?;
            let targets = labels.select(chunk);
            let (loss, grads) = batch_loss(&current, &x, &targets, cfg.loss).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            let updated = current
                .params()
                .iter()
                .zip(grads)
                .map(|(p, g)| p.zip_map(&g, |w, dw| w - cfg.learning_rate * dw))
                .collect::<Result<Vec<_>>>()?;
            if updated.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
            current.set_params(updated);
        }
        loss_curve.push(total / b as f64);
    }
    Ok(TrainReport {
        model: current,
        loss_curve,
    })
}

fn check_labels(model: &Model, data: &SeriesBatch, labels: &Labels, loss: LossKind) -> Result<()> {
    let b = data.len();
    match labels {
        Labels::Static(v) if v.len() != b => {
            return Err(Error::invalid(format!("{} labels for {b} series", v.len())))
        }
        Labels::Temporal(t) if t.shape() != [b, data.seq_len()] => {
            return Err(Error::invalid(format!(
                "temporal labels have shape {:?}, expected [{b}, {}]",
                t.shape(),
                data.seq_len()
            )))
        }
        Labels::Temporal(_) if !model.is_causal() => {
            return Err(Error::invalid("per-step labels need a causal model"))
        }
        _ => {}
    }
    match (model.task(), loss) {
        (TaskKind::Regression, LossKind::CrossEntropy) => {
            Err(Error::invalid("cross-entropy loss needs a classification task"))
        }
        (TaskKind::Multiclass, _) | (TaskKind::Binary, _) => {
            let classes = if model.task() == TaskKind::Binary { 2 } else { model.n_outputs() };
            if labels
                .values()
                .iter()
                .any(|&y| y < 0.0 || y.fract() != 0.0 || y as usize >= classes)
            {
                return Err(Error::invalid(format!(
                    "classification labels must be integers in [0, {classes})"
                )));
            }
            Ok(())
        }
        (TaskKind::Regression, LossKind::Mse) => {
            if model.n_outputs() != 1 {
                return Err(Error::invalid("regression training supports a single output"));
            }
            Ok(())
        }
    }
}

/// Loss of one mini-batch and its gradient for every parameter tensor.
fn batch_loss(model: &Model, x: &Tensor, targets: &Labels, loss: LossKind) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let xi = g.input(x.shape(), false);
    let params = model.param_nodes(&mut g, true);
    let c = model.n_outputs();
    let (outputs, rows) = match targets {
        Labels::Static(v) => (model.build(&mut g, xi, &params)?, v.len()),
        Labels::Temporal(t) => {
            let seq = model.build_sequence(&mut g, xi, &params)?;
            let rows = t.numel();
            (g.reshape(seq, &[rows, c])?, rows)
        }
    };
    let values = targets.values();
    let loss_node = loss_node(&mut g, model.task(), loss, outputs, values, rows)?;
    let mut inputs = Vec::with_capacity(1 + params.len());
    inputs.push(x.clone());
    inputs.extend(model.params().iter().cloned());
    let loss_value = g.forward(&inputs, loss_node)?;
    let mut grads = g.backward(loss_node, Seed::Scalar)?;
    let param_grads = (1..=params.len())
        .map(|slot| grads.take(slot).expect("parameters require grad"))
        .collect();
    Ok((loss_value.data()[0], param_grads))
}

fn loss_node(
    g: &mut Graph,
    task: TaskKind,
    loss: LossKind,
    outputs: NodeId,
    values: &[f64],
    rows: usize,
) -> Result<NodeId> {
    let classes: Vec<usize> = values.iter().map(|&y| y as usize).collect();
    match (task, loss) {
        (TaskKind::Multiclass, LossKind::CrossEntropy) => g.cross_entropy(outputs, &classes),
        (TaskKind::Binary, LossKind::CrossEntropy) => {
            // softmax([0, z]) = [1 - sigmoid(z), sigmoid(z)]
            let zero = g.constant(Tensor::zeros(&[rows, 1]));
            let pair = g.concat(&[zero, outputs], 1)?;
            g.cross_entropy(pair, &classes)
        }
        (TaskKind::Binary, LossKind::Mse) => {
            let p = g.sigmoid(outputs);
            let y = g.constant(Tensor::new(vec![rows, 1], values.to_vec())?);
            g.mse(p, y)
        }
        (TaskKind::Multiclass, LossKind::Mse) => {
            let p = g.softmax(outputs)?;
            let c = g.shape(outputs)[1];
            let mut onehot = Tensor::zeros(&[rows, c]);
            for (r, &k) in classes.iter().enumerate() {
                onehot.data_mut()[r * c + k] = 1.0;
            }
            let y = g.constant(onehot);
            g.mse(p, y)
        }
        (TaskKind::Regression, _) => {
            let y = g.constant(Tensor::new(vec![rows, 1], values.to_vec())?);
            g.mse(outputs, y)
        }
    }
}

/// Fraction of correctly classified labels (per step for temporal labels).
pub fn accuracy(model: &Model, data: &SeriesBatch) -> Result<f64> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid("accuracy needs labels"))?;
    let c = model.n_outputs();
    let classify = |row: &[f64]| -> usize {
        match model.task() {
            TaskKind::Binary => usize::from(row[0] > 0.0),
            _ => argmax(row),
        }
    };
    let (outputs, truth) = match labels {
        Labels::Static(v) => (model.predict(&data.inputs)?, v.clone()),
        Labels::Temporal(t) => (model.predict_sequence(&data.inputs)?, t.data().to_vec()),
    };
    let correct = outputs
        .data()
        .chunks(c)
        .zip(&truth)
        .filter(|(row, &y)| classify(row) == y as usize)
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, Architecture};
    use rand::Rng as _;

    fn toy_set(b: usize, seed: u64) -> SeriesBatch {
        let mut r = rng::seeded(seed);
        let mut xs = Vec::with_capacity(b * 2);
        let mut ys = Vec::with_capacity(b);
        for _ in 0..b {
            let (a, c): (f64, f64) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            xs.extend([a, c]);
            ys.push(if a + 0.5 * c > 0.0 { 1.0 } else { 0.0 });
        }
        SeriesBatch::new(Tensor::new(vec![b, 1, 2], xs).unwrap(), Some(Labels::Static(ys)), None).unwrap()
    }

    fn mlp() -> Model {
        Model::init(
            Architecture::Mlp {
                seq_len: 1,
                n_features: 2,
                hidden: vec![8],
                n_outputs: 2,
                activations: vec![Activation::Tanh],
            },
            TaskKind::Multiclass,
            11,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mlp(), &toy_set(10, 1), &cfg).is_err());
    }

    #[test]
    fn learns_separable_toy_problem() {
        let data = toy_set(200, 3);
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 0.5,
            batch_size: 20,
            loss: LossKind::CrossEntropy,
            seed: 4,
        };
        let report = train(&mlp(), &data, &cfg).unwrap();
        assert!(accuracy(&report.model, &data).unwrap() >= 0.95);
        assert!(report.loss_curve.last().unwrap() < &report.loss_curve[0]);
    }

    #[test]
    fn training_is_reproducible() {
        let data = toy_set(40, 5);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 7,
            ..TrainConfig::default()
        };
        let a = train(&mlp(), &data, &cfg).unwrap();
        let b = train(&mlp(), &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn huge_learning_rate_reports_epoch() {
        let mut data = toy_set(40, 5);
        data.labels = Some(Labels::Static(vec![1.0; 40]));
        let linear = Model::init(
            Architecture::Mlp {
                seq_len: 1,
                n_features: 2,
                hidden: vec![8],
                n_outputs: 1,
                activations: vec![Activation::Identity],
            },
            TaskKind::Regression,
            3,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e6,
            batch_size: 40,
            loss: LossKind::Mse,
            seed: 1,
        };
        let err = train(&linear, &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn label_out_of_range_rejected() {
        let mut data = toy_set(10, 1);
        data.labels = Some(Labels::Static(vec![3.0; 10]));
        assert!(train(&mlp(), &data, &TrainConfig::default()).is_err());
    }
}
