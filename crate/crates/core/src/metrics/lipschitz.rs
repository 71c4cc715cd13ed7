//! Stability of an attribution method under small input changes.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attribution::{predict_one, Context, Method, Target};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzOptions {
    pub radius: f64,
    pub n_samples: usize,
}

impl Default for LipschitzOptions {
    fn default() -> Self {
        Self {
            radius: 0.1,
            n_samples: 10,
        }
    }
}

impl LipschitzOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid(format!("radius must be positive, got {}", self.radius)));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("lipschitz-max needs at least one sample"));
        }
        Ok(())
    }
}

/// Uniform draw from the L2 ball of `radius` around `x`, never `x` itself.
fn ball_sample(x: &Tensor, radius: f64, r: &mut rng::Rng) -> Tensor {
    let d = x.numel();
    loop {
        let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(r)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u: f64 = r.random();
        let scale = radius * u.powf(1.0 / d as f64) / norm;
        let z = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(&dir).map(|(a, b)| a + scale * b).collect(),
        )
        .expect("same shape");
        if norm > 0.0 && z.data() != x.data() {
            return z;
        }
    }
}

/// `max_s ||attr(x) - attr(z_s)|| / ||x - z_s||` over `n_samples` points of the
/// ball. Every call explains the output predicted for `x` with the same method
/// seed, so stochastic methods see the same randomness.
pub fn lipschitz_max(
    method: &Method,
    model: &Model,
    x: &Tensor,
    opts: &LipschitzOptions,
    background: Option<&Tensor>,
    seed: u64,
) -> Result<f64> {
    opts.validate()?;
    let k = Target::Predicted.resolve(model, &predict_one(model, x)?)?;
    let ctx = Context { background, seed };
    let base = method.attribute(model, x, Target::Output(k), &ctx)?.values;
    let mut best = 0.0f64;
    for s in 0..opts.n_samples {
        let z = ball_sample(x, opts.radius, &mut rng::substream(seed, s as u64));
        let a = method.attribute(model, &z, Target::Output(k), &ctx)?.values;
        let num = base.zip_map(&a, |p, q| p - q)?.norm_l2();
        let den = x.zip_map(&z, |p, q| p - q)?.norm_l2();
        best = best.max(num / den);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::IgOptions;
    use crate::models::{Architecture, TaskKind};

    fn linear(w: Vec<f64>) -> Model {
        Model::new(
            Architecture::Mlp {
                seq_len: 3,
                n_features: 2,
                hidden: vec![],
                n_outputs: 1,
                activations: vec![],
            },
            TaskKind::Regression,
            vec![Tensor::new(vec![6, 1], w).unwrap(), Tensor::vector(vec![0.1])],
        )
        .unwrap()
    }

    fn x() -> Tensor {
        Tensor::new(vec![3, 2], vec![0.4, -1.0, 1.3, 0.2, -0.6, 0.9]).unwrap()
    }

    fn ig() -> Method {
        Method::IntegratedGradients(IgOptions {
            steps: 16,
            ..IgOptions::default()
        })
    }

    #[test]
    fn constant_model_is_perfectly_stable() {
        let m = linear(vec![0.0; 6]);
        let v = lipschitz_max(&ig(), &m, &x(), &LipschitzOptions::default(), None, 1).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn linear_ig_respects_the_bound() {
        let w = vec![0.5, -2.0, 1.0, 0.25, 3.0, -1.5];
        let bound = 3.0 * 6f64.sqrt();
        let m = linear(w.clone());
        let v = lipschitz_max(&ig(), &m, &x(), &LipschitzOptions { radius: 0.5, n_samples: 50 }, None, 2).unwrap();
        assert!(v > 0.0 && v <= bound + 1e-9, "{v}");
        // attr(x) - attr(z) = w * (x - z), so the ratio is also at most max |w|.
        assert!(v <= 3.0 + 1e-9);
    }

    #[test]
    fn samples_stay_in_the_ball_and_repeat() {
        let mut r = rng::seeded(4);
        for _ in 0..200 {
            let z = ball_sample(&x(), 0.1, &mut r);
            let d = x().zip_map(&z, |a, b| a - b).unwrap().norm_l2();
            assert!(d > 0.0 && d <= 0.1);
        }
        let m = linear(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let method = Method::default_for("lime").unwrap();
        let opts = LipschitzOptions { radius: 0.1, n_samples: 3 };
        let a = lipschitz_max(&method, &m, &x(), &opts, None, 9).unwrap();
        let b = lipschitz_max(&method, &m, &x(), &opts, None, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_options() {
        assert!(LipschitzOptions { radius: 0.0, n_samples: 1 }.validate().is_err());
        assert!(LipschitzOptions { radius: 1.0, n_samples: 0 }.validate().is_err());
    }
}
