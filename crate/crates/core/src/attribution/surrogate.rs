//! Surrogate-model explainers: LIME and KernelSHAP.
//!
//! Both draw binary masks over the `T * N` cells, replace masked cells with
//! the baseline, and fit a weighted linear model from masks to the explained
//! output. With the LOF kernel the weight of a sample is the similarity
//! score of the masked series with respect to the background set, so
//! unrealistic perturbations count less.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    background_series, predict_many, predict_one, require_background, Attribution, BaselineSpec,
    Context, LofIndex, Target,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::linalg::weighted_least_squares;
use crate::models::Model;
use crate::rng;

/// Largest cell count for exhaustive coalition enumeration.
pub const MAX_EXHAUSTIVE_CELLS: usize = 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimeKernel {
    /// `exp(-d^2 / width^2)` on the distance between input and masked input.
    #[default]
    #[serde(alias = "distance_kernel")]
    Distance,
    /// Similarity score of the masked input against the background.
    #[serde(alias = "lof_kernel")]
    Lof,
    /// Every sample weighs 1.
    Uniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Cosine,
    Euclidean,
}

impl DistanceKind {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceKind::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            DistanceKind::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 && nb == 0.0 {
                    0.0
                } else if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimeOptions {
    pub n_samples: usize,
    pub kernel: LimeKernel,
    pub distance: DistanceKind,
    /// Distance kernel width; defaults to `0.25 * sqrt(T * N)`.
    pub kernel_width: Option<f64>,
    pub baseline: BaselineSpec,
    /// Neighbour count of the LOF kernel.
    pub lof_k: usize,
}

impl Default for LimeOptions {
    fn default() -> Self {
        Self {
            n_samples: 500,
            kernel: LimeKernel::Distance,
            distance: DistanceKind::Cosine,
            kernel_width: None,
            baseline: BaselineSpec::Zeros,
            lof_k: 5,
        }
    }
}

impl LimeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.lof_k == 0 {
            return Err(Error::invalid("lof_k must be at least 1"));
        }
        if let Some(w) = self.kernel_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invalid("kernel_width must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapKernel {
    #[default]
    #[serde(alias = "shap_kernel")]
    Shap,
    #[serde(alias = "lof_kernel")]
    Lof,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapOptions {
    /// Coalitions drawn when not exhaustive.
    pub n_samples: usize,
    /// Enumerate every coalition (at most 12 cells).
    pub exhaustive: bool,
    pub kernel: ShapKernel,
    pub baseline: BaselineSpec,
    pub lof_k: usize,
}

impl Default for ShapOptions {
    fn default() -> Self {
        Self {
            n_samples: 500,
            exhaustive: false,
            kernel: ShapKernel::Shap,
            baseline: BaselineSpec::Zeros,
            lof_k: 5,
        }
    }
}

impl ShapOptions {
    pub fn validate(&self) -> Result<()> {
        if self.lof_k == 0 {
            return Err(Error::invalid("lof_k must be at least 1"));
        }
        Ok(())
    }
}

/// `x` where `keep` is set, `base` elsewhere.
fn compose(x: &[f64], base: &[f64], keep: &[bool]) -> Vec<f64> {
    x.iter()
        .zip(base)
        .zip(keep)
        .map(|((a, b), k)| if *k { *a } else { *b })
        .collect()
}

fn lof_index(background: Option<&Tensor>, shape: &[usize], k: usize) -> Result<LofIndex> {
    let bg = require_background(background, "the LOF kernel")?;
    let points = (0..bg.shape()[0])
        .map(|j| background_series(bg, j, shape).map(Tensor::into_data))
        .collect::<Result<Vec<_>>>()?;
    LofIndex::new(points, k)
}

fn check_samples(n_samples: usize, cells: usize, method: &str) -> Result<()> {
    if n_samples < cells + 2 {
        return Err(Error::invalid(format!(
            "{method} needs at least {} samples for {cells} cells, got {n_samples}",
            cells + 2
        )));
    }
    Ok(())
}

pub fn lime(model: &Model, x: &Tensor, opts: &LimeOptions, target: Target, ctx: &Context) -> Result<Attribution> {
    opts.validate()?;
    let (t, n) = (x.shape()[0], x.shape()[1]);
    let m = t * n;
    check_samples(opts.n_samples, m, "LIME")?;
    let mut r = rng::seeded(ctx.seed);
    let base = opts.baseline.draw(x.shape(), ctx.background, &mut r)?;
    let k = target.resolve(model, &predict_one(model, x)?)?;
    let lof = match opts.kernel {
        LimeKernel::Lof => Some(lof_index(ctx.background, x.shape(), opts.lof_k)?),
        _ => None,
    };
    let width = opts.kernel_width.unwrap_or(0.25 * (m as f64).sqrt());

    let masks: Vec<Vec<bool>> = (0..opts.n_samples)
        .map(|_| (0..m).map(|_| r.random_bool(0.5)).collect())
        .collect();
    let mut series = Vec::with_capacity(opts.n_samples * m);
    let mut weights = Vec::with_capacity(opts.n_samples);
    for z in &masks {
        let xz = compose(x.data(), base.data(), z);
        weights.push(match opts.kernel {
            LimeKernel::Distance => {
                let d = opts.distance.distance(x.data(), &xz);
                (-(d * d) / (width * width)).exp()
            }
            LimeKernel::Lof => lof.as_ref().expect("built above").similarity(&xz)?,
            LimeKernel::Uniform => 1.0,
        });
        series.extend(xz);
    }
    let out = predict_many(model, &series, t, n)?;
    let c = model.n_outputs();
    let targets: Vec<f64> = (0..opts.n_samples).map(|s| out[s * c + k]).collect();
    let mut design = Vec::with_capacity(opts.n_samples * (m + 1));
    for z in &masks {
        design.push(1.0);
        design.extend(z.iter().map(|&b| f64::from(u8::from(b))));
    }
    let fit = weighted_least_squares(&design, m + 1, &targets, &weights)?;
    let values = Tensor::new(vec![t, n], fit.coefficients[1..].to_vec())?;
    Ok(Attribution::single("lime", values, k))
}

/// Shapley kernel weight of a coalition of `s` out of `m` cells.
fn shapley_kernel(m: usize, s: usize) -> f64 {
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

pub fn kernel_shap(model: &Model, x: &Tensor, opts: &ShapOptions, target: Target, ctx: &Context) -> Result<Attribution> {
    opts.validate()?;
    let (t, n) = (x.shape()[0], x.shape()[1]);
    let m = t * n;
    let mut r = rng::seeded(ctx.seed);
    let base = opts.baseline.draw(x.shape(), ctx.background, &mut r)?;
    let out_x = predict_one(model, x)?;
    let k = target.resolve(model, &out_x)?;
    let f_x = out_x[k];
    let f_base = predict_one(model, &base)?[k];
    let delta = f_x - f_base;
    if m == 1 {
        return Ok(Attribution::single("kernel_shap", Tensor::new(vec![t, n], vec![delta])?, k));
    }

    // Coalitions with their kernel weight; empty and full ones enter as constraints.
    let coalitions: Vec<(Vec<bool>, f64)> = if opts.exhaustive {
        if m > MAX_EXHAUSTIVE_CELLS {
            return Err(Error::invalid(format!(
                "exhaustive KernelSHAP handles at most {MAX_EXHAUSTIVE_CELLS} cells, got {m}"
            )));
        }
        (1..(1u32 << m) - 1)
            .map(|bits| {
                let z: Vec<bool> = (0..m).map(|j| bits >> j & 1 == 1).collect();
                let s = bits.count_ones() as usize;
                (z, shapley_kernel(m, s))
            })
            .collect()
    } else {
        check_samples(opts.n_samples, m, "KernelSHAP")?;
        let sizes: Vec<f64> = (1..m).map(|s| shapley_kernel(m, s) * binomial(m, s)).collect();
        let total: f64 = sizes.iter().sum();
        (0..opts.n_samples)
            .map(|_| {
                let mut u = r.random::<f64>() * total;
                let mut s = m - 1;
                for (i, p) in sizes.iter().enumerate() {
                    if u < *p {
                        s = i + 1;
                        break;
                    }
                    u -= p;
                }
                let mut z = vec![false; m];
                for j in index::sample(&mut r, m, s) {
                    z[j] = true;
                }
                (z, 1.0)
            })
            .collect()
    };

    let lof = match opts.kernel {
        ShapKernel::Lof => Some(lof_index(ctx.background, x.shape(), opts.lof_k)?),
        ShapKernel::Shap => None,
    };
    let mut series = Vec::with_capacity(coalitions.len() * m);
    let mut weights = Vec::with_capacity(coalitions.len());
    for (z, w) in &coalitions {
        let xz = compose(x.data(), base.data(), z);
        let factor = match &lof {
            Some(index) => index.similarity(&xz)?,
            None => 1.0,
        };
        weights.push(w * factor);
        series.extend(xz);
    }
    let out = predict_many(model, &series, t, n)?;
    let c = model.n_outputs();

    // Eliminate the last cell with the efficiency constraint sum(phi) = delta.
    let mut design = Vec::with_capacity(coalitions.len() * (m - 1));
    let mut targets = Vec::with_capacity(coalitions.len());
    for (row, (z, _)) in coalitions.iter().enumerate() {
        let last = f64::from(u8::from(z[m - 1]));
        design.extend(z[..m - 1].iter().map(|&b| f64::from(u8::from(b)) - last));
        targets.push(out[row * c + k] - f_base - last * delta);
    }
    let fit = weighted_least_squares(&design, m - 1, &targets, &weights)?;
    let mut phi = fit.coefficients;
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(Attribution::single("kernel_shap", Tensor::new(vec![t, n], phi)?, k))
}

fn binomial(m: usize, s: usize) -> f64 {
    (0..s).fold(1.0, |acc, j| acc * (m - j) as f64 / (j + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, Architecture, TaskKind};

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
            vec![Tensor::new(vec![t * n, 1], w.to_vec()).unwrap(), Tensor::vector(vec![-0.4])],
        )
        .unwrap()
    }

    fn series(t: usize, n: usize) -> Tensor {
        Tensor::new(vec![t, n], (0..t * n).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.6 + 0.1).collect()).unwrap()
    }

    /// Shapley values by enumerating every coalition with factorial weights.
    fn brute_shapley(model: &Model, x: &Tensor, base: &Tensor, k: usize) -> Vec<f64> {
        let m = x.numel();
        let value = |bits: u32| -> f64 {
            let keep: Vec<bool> = (0..m).map(|j| bits >> j & 1 == 1).collect();
            let xz = Tensor::new(x.shape().to_vec(), compose(x.data(), base.data(), &keep)).unwrap();
            predict_one(model, &xz).unwrap()[k]
        };
        let fact = |v: usize| -> f64 { (1..=v).map(|i| i as f64).product() };
        (0..m)
            .map(|i| {
                (0..1u32 << m)
                    .filter(|s| s >> i & 1 == 0)
                    .map(|s| {
                        let size = s.count_ones() as usize;
                        let w = fact(size) * fact(m - size - 1) / fact(m);
                        w * (value(s | 1 << i) - value(s))
                    })
                    .sum()
            })
            .collect()
    }

    fn exhaustive() -> ShapOptions {
        ShapOptions {
            exhaustive: true,
            ..ShapOptions::default()
        }
    }

    #[test]
    fn exhaustive_shap_on_linear_model_is_w_times_x() {
        let w = [0.5, -1.0, 2.0, 0.25, 1.5, -0.75];
        let m = linear(3, 2, &w);
        let x = series(3, 2);
        let a = kernel_shap(&m, &x, &exhaustive(), Target::Predicted, &Context::default()).unwrap();
        for i in 0..6 {
            assert!((a.values.data()[i] - w[i] * x.data()[i]).abs() < 1e-9, "{i}");
        }
    }

    #[test]
    fn exhaustive_shap_matches_brute_force_on_nonlinear_model() {
        let m = Model::init(
            Architecture::Rnn {
                n_features: 2,
                hidden: 4,
                n_outputs: 2,
                activation: Activation::Tanh,
            },
            TaskKind::Multiclass,
            8,
        )
        .unwrap();
        let x = series(4, 2);
        let a = kernel_shap(&m, &x, &exhaustive(), Target::Output(1), &Context::default()).unwrap();
        let oracle = brute_shapley(&m, &x, &Tensor::zeros(&[4, 2]), 1);
        for (got, want) in a.values.data().iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn efficiency_holds_when_sampling() {
        let m = Model::init(
            Architecture::Rnn {
                n_features: 3,
                hidden: 5,
                n_outputs: 1,
                activation: Activation::Tanh,
            },
            TaskKind::Regression,
            2,
        )
        .unwrap();
        let x = series(5, 3);
        let opts = ShapOptions {
            n_samples: 200,
            ..ShapOptions::default()
        };
        let ctx = Context { background: None, seed: 4 };
        let a = kernel_shap(&m, &x, &opts, Target::Predicted, &ctx).unwrap();
        let gap = predict_one(&m, &x).unwrap()[0] - predict_one(&m, &Tensor::zeros(&[5, 3])).unwrap()[0];
        assert!((a.values.sum() - gap).abs() < 1e-8);
    }

    #[test]
    fn constant_model_gives_zero_coefficients() {
        let m = linear(2, 2, &[0.0; 4]);
        let x = series(2, 2);
        let bg = Tensor::new(vec![6, 2, 2], (0..24).map(|v| v as f64).collect()).unwrap();
        let ctx = Context {
            background: Some(&bg),
            seed: 3,
        };
        for kernel in [LimeKernel::Distance, LimeKernel::Lof, LimeKernel::Uniform] {
            let opts = LimeOptions {
                n_samples: 50,
                kernel,
                lof_k: 2,
                ..LimeOptions::default()
            };
            let a = lime(&m, &x, &opts, Target::Predicted, &ctx).unwrap();
            assert!(a.values.data().iter().all(|v| v.abs() < 1e-9), "{kernel:?}");
        }
        for kernel in [ShapKernel::Shap, ShapKernel::Lof] {
            let opts = ShapOptions {
                kernel,
                lof_k: 2,
                ..exhaustive()
            };
            let a = kernel_shap(&m, &x, &opts, Target::Predicted, &ctx).unwrap();
            assert!(a.values.data().iter().all(|v| v.abs() < 1e-9), "{kernel:?}");
        }
    }

    #[test]
    fn lime_recovers_linear_weights() {
        let w = [0.5, -1.0, 2.0, 0.25];
        let m = linear(2, 2, &w);
        let x = series(2, 2);
        let opts = LimeOptions {
            n_samples: 100,
            ..LimeOptions::default()
        };
        let ctx = Context { background: None, seed: 1 };
        let a = lime(&m, &x, &opts, Target::Predicted, &ctx).unwrap();
        for i in 0..4 {
            assert!((a.values.data()[i] - w[i] * x.data()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn far_background_keeps_linear_ranking() {
        let w = [0.5, -1.0, 2.0, 0.25];
        let m = linear(2, 2, &w);
        let x = series(2, 2);
        let bg = Tensor::new(
            vec![6, 2, 2],
            (0..24).map(|v| 1000.0 + (v % 7) as f64).collect(),
        )
        .unwrap();
        let ctx = Context {
            background: Some(&bg),
            seed: 6,
        };
        let lof_opts = LimeOptions {
            n_samples: 80,
            kernel: LimeKernel::Lof,
            lof_k: 3,
            ..LimeOptions::default()
        };
        let plain = lime(&m, &x, &LimeOptions { kernel: LimeKernel::Uniform, ..lof_opts.clone() }, Target::Predicted, &ctx).unwrap();
        let weighted = lime(&m, &x, &lof_opts, Target::Predicted, &ctx).unwrap();
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|a, b| v[*b].total_cmp(&v[*a]));
            idx
        };
        assert_eq!(rank(plain.values.data()), rank(weighted.values.data()));
    }

    #[test]
    fn too_few_samples_rejected() {
        let m = linear(2, 2, &[1.0; 4]);
        let opts = LimeOptions {
            n_samples: 5,
            ..LimeOptions::default()
        };
        assert!(lime(&m, &series(2, 2), &opts, Target::Predicted, &Context::default()).is_err());
        let big = linear(4, 4, &[1.0; 16]);
        assert!(kernel_shap(&big, &series(4, 4), &exhaustive(), Target::Predicted, &Context::default()).is_err());
    }

    #[test]
    fn cosine_distance_edges() {
        assert_eq!(DistanceKind::Cosine.distance(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(DistanceKind::Cosine.distance(&[1.0, 0.0], &[0.0, 0.0]), 1.0);
        assert!((DistanceKind::Cosine.distance(&[1.0, 0.0], &[0.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(DistanceKind::Euclidean.distance(&[3.0, 0.0], &[0.0, 4.0]), 5.0);
    }
}
