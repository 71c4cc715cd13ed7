//! ARMA features with a white-box window regressor.
//!
//! Each feature is an independent ARMA(p, q) series
//! `x_t = sum_k ar_k x_{t-k} + e_t + sum_k ma_k e_{t-k}` with Gaussian noise.
//! The regressor sums squares over a rectangular window, so the cells of
//! that window are exactly the salient ones.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datasets::{Labels, SaliencyTruth, SeriesBatch, TruthKind};
use crate::error::{Error, Result};
use crate::models::{Architecture, Model, SalientWindow, TaskKind};
use crate::rng;

const BURN_IN: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmaConfig {
    pub batch: usize,
    pub seq_len: usize,
    pub n_features: usize,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub noise_std: f64,
    /// Defaults to the middle fifth of the series on feature `n_features / 2`.
    pub window: Option<SalientWindow>,
    pub seed: u64,
}

impl Default for ArmaConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            seq_len: 50,
            n_features: 3,
            ar: vec![0.5, -0.25],
            ma: vec![0.3, 0.2],
            noise_std: 1.0,
            window: None,
            seed: 0,
        }
    }
}

impl ArmaConfig {
    pub fn salient_window(&self) -> SalientWindow {
        self.window.clone().unwrap_or_else(|| SalientWindow {
            t_start: 2 * self.seq_len / 5,
            t_end: (3 * self.seq_len / 5).max(2 * self.seq_len / 5 + 1),
            features: vec![self.n_features / 2],
        })
    }
}

#[derive(Clone, Debug)]
pub struct ArmaDataset {
    /// Labels are the regressor outputs `f(x)`.
    pub batch: SeriesBatch,
    pub truth: SaliencyTruth,
    pub model: Model,
}

/// True when the AR polynomial `1 - sum ar_k z^k` has all roots outside the unit circle.
///
/// Uses the step-down recursion to partial autocorrelations; stationary iff
/// every one lies strictly inside (-1, 1).
pub fn is_stationary(ar: &[f64]) -> bool {
    let mut a = ar.to_vec();
    while let Some(&r) = a.last() {
        if !(r.abs() < 1.0) {
            return false;
        }
        let k = a.len();
        let denom = 1.0 - r * r;
        a = (0..k - 1)
            .map(|j| (a[j] + r * a[k - 2 - j]) / denom)
            .collect();
    }
    true
}

/// The white-box regressor for `window`.
pub fn window_regressor(n_features: usize, window: SalientWindow) -> Result<Model> {
    Model::new(
        Architecture::WindowSumOfSquares { n_features, window },
        TaskKind::Regression,
        Vec::new(),
    )
}

pub fn generate_arma(cfg: &ArmaConfig) -> Result<ArmaDataset> {
    if cfg.batch == 0 || cfg.seq_len == 0 || cfg.n_features == 0 {
        return Err(Error::invalid("ARMA batch, length and feature count must be positive"));
    }
    if !is_stationary(&cfg.ar) {
        return Err(Error::invalid(format!(
            "AR coefficients {:?} are not stationary",
            cfg.ar
        )));
    }
    if !(cfg.noise_std > 0.0) {
        return Err(Error::invalid("noise_std must be positive"));
    }
    let window = cfg.salient_window();
    window.validate(cfg.seq_len, cfg.n_features)?;

    let (b, t, n) = (cfg.batch, cfg.seq_len, cfg.n_features);
    let noise = Normal::new(0.0, cfg.noise_std).expect("positive std");
    let mut rng = rng::seeded(cfg.seed);
    let total = BURN_IN + t;
    let mut data = vec![0.0; b * t * n];
    for series in 0..b {
        for feature in 0..n {
            let mut x = vec![0.0; total];
            let mut e = vec![0.0; total];
            for step in 0..total {
                e[step] = noise.sample(&mut rng);
                let mut v = e[step];
                for (k, phi) in cfg.ar.iter().enumerate() {
                    if step > k {
                        v += phi * x[step - k - 1];
                    }
                }
                for (k, theta) in cfg.ma.iter().enumerate() {
                    if step > k {
                        v += theta * e[step - k - 1];
                    }
                }
                x[step] = v;
            }
            for step in 0..t {
                data[(series * t + step) * n + feature] = x[BURN_IN + step];
            }
        }
    }
    let inputs = Tensor::new(vec![b, t, n], data)?;

    let mut truth = Tensor::zeros(&[b, t, n]);
    for series in 0..b {
        for step in window.t_start..window.t_end {
            for &f in &window.features {
                truth.data_mut()[(series * t + step) * n + f] = 1.0;
            }
        }
    }
    let model = window_regressor(n, window)?;
    let labels = model.predict(&inputs)?.into_data();
    Ok(ArmaDataset {
        batch: SeriesBatch::new(inputs, Some(Labels::Static(labels)), None)?,
        truth: SaliencyTruth {
            values: truth,
            kind: TruthKind::Binary,
        },
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationarity_check() {
        assert!(is_stationary(&[0.5, -0.25]));
        assert!(is_stationary(&[0.5, 0.3]));
        assert!(!is_stationary(&[0.8, 0.3]));
        assert!(!is_stationary(&[1.0]));
        assert!(is_stationary(&[]));
    }

    #[test]
    fn nonstationary_rejected() {
        let cfg = ArmaConfig {
            ar: vec![1.2],
            ..ArmaConfig::default()
        };
        assert!(generate_arma(&cfg).is_err());
    }

    #[test]
    fn empty_window_rejected() {
        let cfg = ArmaConfig {
            window: Some(SalientWindow {
                t_start: 5,
                t_end: 5,
                features: vec![0],
            }),
            ..ArmaConfig::default()
        };
        assert!(generate_arma(&cfg).is_err());
    }

    #[test]
    fn window_count() {
        let cfg = ArmaConfig {
            batch: 1,
            seq_len: 50,
            n_features: 3,
            window: Some(SalientWindow {
                t_start: 10,
                t_end: 20,
                features: vec![1],
            }),
            ..ArmaConfig::default()
        };
        let d = generate_arma(&cfg).unwrap();
        assert_eq!(d.truth.values.sum(), 10.0);
    }

    #[test]
    fn full_window_truth_is_all_ones() {
        let cfg = ArmaConfig {
            batch: 2,
            seq_len: 6,
            n_features: 2,
            window: Some(SalientWindow {
                t_start: 0,
                t_end: 6,
                features: vec![0, 1],
            }),
            ..ArmaConfig::default()
        };
        let d = generate_arma(&cfg).unwrap();
        assert!(d.truth.values.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = ArmaConfig::default();
        assert_eq!(generate_arma(&cfg).unwrap().batch, generate_arma(&cfg).unwrap().batch);
    }

    #[test]
    fn regressor_gradient_is_twice_input_in_window() {
        let d = generate_arma(&ArmaConfig {
            batch: 1,
            seq_len: 10,
            ..ArmaConfig::default()
        })
        .unwrap();
        let x = d.batch.series(0);
        let grad = d.model.gradient_at(&x, 0).unwrap();
        let w = d.model.architecture().clone();
        let Architecture::WindowSumOfSquares { window, .. } = w else { unreachable!() };
        for t in 0..10 {
            for i in 0..3 {
                let expected = if window.contains(t, i) { 2.0 * x.at(&[t, i]) } else { 0.0 };
                assert_eq!(grad.at(&[t, i]), expected);
            }
        }
    }
}
