//! Multivariate Hawkes process with exponential kernels.
//!
//! The intensity of type `k` is
//! `lambda_k(t) = mu_k + sum_n alpha[k][n] sum_{t_i^n < t} exp(-beta[k][n] (t - t_i^n))`.
//! Sequences are simulated by Ogata thinning and binned into per-type
//! counts. The saliency of bin `t'` for bin `t` is the share of the total
//! intensity at the start of bin `t` contributed by the events in bin `t'`.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datasets::{Labels, SaliencyTruth, SeriesBatch, TruthKind};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    pub mu: Vec<f64>,
    /// `alpha[k][n]`: excitation of type `k` by events of type `n`.
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub horizon: f64,
}

impl Default for HawkesParams {
    fn default() -> Self {
        Self {
            mu: vec![0.2, 0.2],
            alpha: vec![vec![0.4, 0.2], vec![0.2, 0.4]],
            beta: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            horizon: 50.0,
        }
    }
}

impl HawkesParams {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Spectral radius of the branching matrix `alpha / beta`.
    pub fn branching_ratio(&self) -> f64 {
        let k = self.dim();
        let m = DMatrix::from_fn(k, k, |i, j| self.alpha[i][j] / self.beta[i][j]);
        m.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.dim();
        if k == 0 {
            return Err(Error::invalid("Hawkes process needs at least one type"));
        }
        let square = |m: &Vec<Vec<f64>>| m.len() == k && m.iter().all(|r| r.len() == k);
        if !square(&self.alpha) || !square(&self.beta) {
            return Err(Error::invalid(format!("alpha and beta must be {k} x {k}")));
        }
        if self.mu.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::invalid("mu must be positive"));
        }
        if self.alpha.iter().flatten().any(|&a| !(a >= 0.0)) {
            return Err(Error::invalid("alpha must be non-negative"));
        }
        if self.beta.iter().flatten().any(|&b| !(b > 0.0)) {
            return Err(Error::invalid("beta must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let rho = self.branching_ratio();
        if !(rho < 1.0) {
            return Err(Error::invalid(format!(
                "process is not stationary: spectral radius of alpha/beta is {rho}"
            )));
        }
        Ok(())
    }
}

/// `lambda_k(t)` from the event history, counting only events strictly before `t`.
pub fn hawkes_intensity(params: &HawkesParams, history: &[Event], t: f64, k: usize) -> Result<f64> {
    if k >= params.dim() {
        return Err(Error::invalid(format!("event type {k} out of range")));
    }
    if history.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(Error::invalid("event history must be sorted by time"));
    }
    let mut lambda = params.mu[k];
    for e in history.iter().take_while(|e| e.time < t) {
        lambda += params.alpha[k][e.kind] * (-params.beta[k][e.kind] * (t - e.time)).exp();
    }
    Ok(lambda)
}

/// Exponentially decayed excitation sums, one per `(k, n)` pair.
struct Excitation<'a> {
    params: &'a HawkesParams,
    sums: Vec<f64>,
    at: f64,
}

impl<'a> Excitation<'a> {
    fn new(params: &'a HawkesParams) -> Self {
        let k = params.dim();
        Self {
            params,
            sums: vec![0.0; k * k],
            at: 0.0,
        }
    }

    /// Per-type intensities at `t >= self.at`, without recording anything.
    fn intensities(&self, t: f64) -> Vec<f64> {
        let k = self.params.dim();
        (0..k)
            .map(|i| {
                self.params.mu[i]
                    + (0..k)
                        .map(|n| {
                            self.params.alpha[i][n]
                                * self.sums[i * k + n]
                                * (-self.params.beta[i][n] * (t - self.at)).exp()
                        })
                        .sum::<f64>()
            })
            .collect()
    }

    fn record(&mut self, e: Event) {
        let k = self.params.dim();
        for i in 0..k {
            for n in 0..k {
                self.sums[i * k + n] *= (-self.params.beta[i][n] * (e.time - self.at)).exp();
            }
            self.sums[i * k + e.kind] += 1.0;
        }
        self.at = e.time;
    }
}

/// Ogata thinning on `[0, horizon)`.
pub fn simulate_hawkes(params: &HawkesParams, horizon: f64, rng: &mut Rng) -> Result<Vec<Event>> {
    params.validate()?;
    let mut state = Excitation::new(params);
    let mut events = Vec::new();
    let mut now = 0.0;
    loop {
        // Intensities only decay until the next event, so the current total bounds them.
        let bound: f64 = state.intensities(now).iter().sum();
        now += Exp::new(bound).expect("positive bound").sample(rng);
        if now >= horizon {
            break;
        }
        let lambdas = state.intensities(now);
        let total: f64 = lambdas.iter().sum();
        debug_assert!(total <= bound * (1.0 + 1e-12));
        let u: f64 = rng.random::<f64>() * bound;
        if u <= total {
            let mut pick = rng.random::<f64>() * total;
            let mut kind = lambdas.len() - 1;
            for (i, l) in lambdas.iter().enumerate() {
                if pick < *l {
                    kind = i;
                    break;
                }
                pick -= l;
            }
            let e = Event { time: now, kind };
            state.record(e);
            events.push(e);
        }
    }
    Ok(events)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HawkesConfig {
    pub params: HawkesParams,
    pub batch: usize,
    /// Number of equal-width bins the horizon is split into.
    pub bins: usize,
    pub seed: u64,
}

impl Default for HawkesConfig {
    fn default() -> Self {
        Self {
            params: HawkesParams::default(),
            batch: 64,
            bins: 25,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HawkesDataset {
    /// Events on `[0, horizon)`.
    pub events: Vec<Vec<Event>>,
    /// Counts `[B, bins, K]`; label `t` is 1 when bin `t + 1` holds an event.
    pub batch: SeriesBatch,
    /// `[B, bins, bins, K]`, real-valued.
    pub truth: SaliencyTruth,
}

/// Temporal truth of one sequence, `[bins, bins, K]`.
pub fn temporal_truth(params: &HawkesParams, events: &[Event], bins: usize, width: f64) -> Tensor {
    let k = params.dim();
    let mut truth = Tensor::zeros(&[bins, bins, k]);
    for t in 1..bins {
        let tau = t as f64 * width;
        let mut contrib = vec![0.0; bins * k];
        for e in events.iter().take_while(|e| e.time < tau) {
            let bin = ((e.time / width) as usize).min(bins - 1);
            let c: f64 = (0..k)
                .map(|i| params.alpha[i][e.kind] * (-params.beta[i][e.kind] * (tau - e.time)).exp())
                .sum();
            contrib[bin * k + e.kind] += c;
        }
        let excitation: f64 = contrib.iter().sum();
        if excitation == 0.0 {
            continue;
        }
        let lambda = params.mu.iter().sum::<f64>() + excitation;
        let row = &mut truth.data_mut()[t * bins * k..(t + 1) * bins * k];
        row.iter_mut().zip(&contrib).for_each(|(r, c)| *r = c / lambda);
    }
    truth
}

pub fn generate_hawkes(cfg: &HawkesConfig) -> Result<HawkesDataset> {
    cfg.params.validate()?;
    if cfg.batch == 0 || cfg.bins < 2 {
        return Err(Error::invalid("Hawkes batch must be positive and bins at least 2"));
    }
    let (b, t, k) = (cfg.batch, cfg.bins, cfg.params.dim());
    let width = cfg.params.horizon / t as f64;
    let mut counts = vec![0.0; b * t * k];
    let mut labels = vec![0.0; b * t];
    let mut truth = Vec::with_capacity(b * t * t * k);
    let mut all_events = Vec::with_capacity(b);
    for series in 0..b {
        let mut rng = rng::substream(cfg.seed, series as u64);
        // One extra bin supplies the label of the last step.
        let events = simulate_hawkes(&cfg.params, cfg.params.horizon + width, &mut rng)?;
        for e in &events {
            let bin = (e.time / width) as usize;
            if bin < t {
                counts[(series * t + bin) * k + e.kind] += 1.0;
            }
            if bin >= 1 && bin <= t {
                labels[series * t + bin - 1] = 1.0;
            }
        }
        let inside: Vec<Event> = events
            .into_iter()
            .filter(|e| e.time < cfg.params.horizon)
            .collect();
        truth.extend_from_slice(temporal_truth(&cfg.params, &inside, t, width).data());
        all_events.push(inside);
    }
    Ok(HawkesDataset {
        events: all_events,
        batch: SeriesBatch::new(
            Tensor::new(vec![b, t, k], counts)?,
            Some(Labels::Temporal(Tensor::new(vec![b, t], labels)?)),
            None,
        )?,
        truth: SaliencyTruth {
            values: Tensor::new(vec![b, t, t, k], truth)?,
            kind: TruthKind::Real,
        },
    })
}
