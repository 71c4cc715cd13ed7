//! Two-state hidden Markov model with three observed features.
//!
//! State 0 emits feature 1 around +1 and state 1 emits feature 2 around -1,
//! both with a small spread; the two remaining features are standard normal
//! noise. The label at each step is `1[x_salient > 0]`, so exactly one of
//! features 1 and 2 is salient per step and feature 0 never is.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datasets::{Labels, SaliencyTruth, SeriesBatch, TruthKind};
use crate::error::{Error, Result};
use crate::rng;

pub const HMM_FEATURES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmConfig {
    pub batch: usize,
    pub seq_len: usize,
    /// Row-stochastic `[[p00, p01], [p10, p11]]`.
    pub transition: [[f64; 2]; 2],
    pub emission_std: f64,
    pub seed: u64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        Self {
            batch: 200,
            seq_len: 50,
            transition: [[0.9, 0.1], [0.1, 0.9]],
            emission_std: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HmmDataset {
    pub batch: SeriesBatch,
    pub truth: SaliencyTruth,
    /// Hidden state per series and step.
    pub states: Vec<Vec<usize>>,
}

/// Salient feature and its emission mean for `state`.
fn salient(state: usize) -> (usize, f64) {
    if state == 0 {
        (1, 1.0)
    } else {
        (2, -1.0)
    }
}

pub fn generate_hmm(cfg: &HmmConfig) -> Result<HmmDataset> {
    if cfg.seq_len < 2 {
        return Err(Error::invalid("HMM series need at least two steps"));
    }
    if cfg.batch == 0 {
        return Err(Error::invalid("HMM batch must be positive"));
    }
    for row in &cfg.transition {
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row[0] + row[1] - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "transition rows must be probability vectors, got {:?}",
                cfg.transition
            )));
        }
    }
    if !(cfg.emission_std > 0.0) {
        return Err(Error::invalid("emission_std must be positive"));
    }

    let (b, t, n) = (cfg.batch, cfg.seq_len, HMM_FEATURES);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let tight = Normal::new(0.0, cfg.emission_std).expect("positive std");
    let mut rng = rng::seeded(cfg.seed);
    let mut inputs = vec![0.0; b * t * n];
    let mut labels = vec![0.0; b * t];
    let mut truth = vec![0.0; b * t * n];
    let mut states = Vec::with_capacity(b);
    for series in 0..b {
        let mut state = usize::from(rng.random_bool(0.5));
        let mut path = Vec::with_capacity(t);
        for step in 0..t {
            if step > 0 {
                state = usize::from(rng.random_bool(cfg.transition[state][1]));
            }
            path.push(state);
            let (feature, mean) = salient(state);
            let base = (series * t + step) * n;
            for f in 0..n {
                inputs[base + f] = if f == feature {
                    mean + tight.sample(&mut rng)
                } else {
                    noise.sample(&mut rng)
                };
            }
            truth[base + feature] = 1.0;
            labels[series * t + step] = if inputs[base + feature] > 0.0 { 1.0 } else { 0.0 };
        }
        states.push(path);
    }
    Ok(HmmDataset {
        batch: SeriesBatch::new(
            Tensor::new(vec![b, t, n], inputs)?,
            Some(Labels::Temporal(Tensor::new(vec![b, t], labels)?)),
            None,
        )?,
        truth: SaliencyTruth {
            values: Tensor::new(vec![b, t, n], truth)?,
            kind: TruthKind::Binary,
        },
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_salient_feature_per_step() {
        let d = generate_hmm(&HmmConfig {
            batch: 5,
            seq_len: 20,
            ..HmmConfig::default()
        })
        .unwrap();
        for row in d.truth.values.data().chunks(HMM_FEATURES) {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert_eq!(row[0], 0.0);
        }
    }

    #[test]
    fn transition_frequencies_match() {
        let cfg = HmmConfig {
            batch: 100,
            seq_len: 200,
            transition: [[0.9, 0.1], [0.2, 0.8]],
            ..HmmConfig::default()
        };
        let d = generate_hmm(&cfg).unwrap();
        let mut counts = [[0usize; 2]; 2];
        for path in &d.states {
            for w in path.windows(2) {
                counts[w[0]][w[1]] += 1;
            }
        }
        for s in 0..2 {
            let total = (counts[s][0] + counts[s][1]) as f64;
            for s2 in 0..2 {
                let freq = counts[s][s2] as f64 / total;
                assert!((freq - cfg.transition[s][s2]).abs() < 0.05, "{s}->{s2}: {freq}");
            }
        }
    }

    #[test]
    fn short_series_rejected() {
        assert!(generate_hmm(&HmmConfig {
            seq_len: 1,
            ..HmmConfig::default()
        })
        .is_err());
    }
}
