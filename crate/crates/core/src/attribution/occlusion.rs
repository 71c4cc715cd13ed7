//! Single-cell occlusion and its augmented and temporal variants.
//!
//! The attribution of cell `(t, i)` is `F(x) - mean_d F(x with x[t, i] replaced)`.
//! Fixed strategies replace with the baseline; augmented strategies bootstrap
//! the replacement from the background values of the same cell. Temporal
//! strategies score `(t, i)` on the crop `x[:t]`, so only the last step of
//! each crop is ever replaced.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    batched, crop, predict_many, predict_one, require_background, require_causal, Attribution,
    BaselineSpec, Context, Target,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionStrategy {
    #[default]
    Fixed,
    Augmented,
    Temporal,
    TemporalAugmented,
}

impl OcclusionStrategy {
    pub fn is_augmented(self) -> bool {
        matches!(self, Self::Augmented | Self::TemporalAugmented)
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, Self::Temporal | Self::TemporalAugmented)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionOptions {
    pub strategy: OcclusionStrategy,
    /// Replacement for the fixed strategies.
    pub baseline: BaselineSpec,
    /// Replacement draws averaged per cell; a deterministic baseline uses one.
    pub draws: usize,
}

impl Default for OcclusionOptions {
    fn default() -> Self {
        Self {
            strategy: OcclusionStrategy::Fixed,
            baseline: BaselineSpec::Zeros,
            draws: 25,
        }
    }
}

impl OcclusionOptions {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::invalid("occlusion needs at least one draw"));
        }
        Ok(())
    }

    fn effective_draws(&self) -> usize {
        if self.strategy.is_augmented() || !self.baseline.is_deterministic() {
            self.draws
        } else {
            1
        }
    }
}

/// Replacement values `[D, T, N]`.
fn replacements(opts: &OcclusionOptions, shape: &[usize], background: Option<&Tensor>, rng: &mut Rng) -> Result<Vec<Tensor>> {
    let draws = opts.effective_draws();
    if opts.strategy.is_augmented() {
        let bg = require_background(background, "augmented occlusion")?;
        let s = bg.shape();
        let (t, n) = (shape[0], shape[1]);
        if s[2] != n || s[1] < t {
            return Err(Error::invalid(format!(
                "background series {:?} cannot cover a [{t}, {n}] input",
                &s[1..]
            )));
        }
        (0..draws)
            .map(|_| {
                let data = (0..t * n)
                    .map(|cell| {
                        let j = rng.random_range(0..s[0]);
                        bg.data()[j * s[1] * n + cell]
                    })
                    .collect();
                Tensor::new(vec![t, n], data)
            })
            .collect()
    } else {
        (0..draws).map(|_| opts.baseline.draw(shape, background, rng)).collect()
    }
}

pub fn occlusion(model: &Model, x: &Tensor, opts: &OcclusionOptions, target: Target, ctx: &Context) -> Result<Attribution> {
    opts.validate()?;
    let (t_len, n) = (x.shape()[0], x.shape()[1]);
    let c = model.n_outputs();
    let reps = replacements(opts, x.shape(), ctx.background, &mut rng::seeded(ctx.seed))?;
    let d = reps.len() as f64;
    let mut values = Tensor::zeros(&[t_len, n]);

    if !opts.strategy.is_temporal() {
        let base = predict_one(model, x)?;
        let k = target.resolve(model, &base)?;
        let f0 = base[k];
        let mut series = Vec::with_capacity(t_len * n * reps.len() * t_len * n);
        for cell in 0..t_len * n {
            for r in &reps {
                let start = series.len();
                series.extend_from_slice(x.data());
                series[start + cell] = r.data()[cell];
            }
        }
        let out = predict_many(model, &series, t_len, n)?;
        for (cell, v) in values.data_mut().iter_mut().enumerate() {
            let mean = (0..reps.len())
                .map(|j| out[(cell * reps.len() + j) * c + k])
                .sum::<f64>()
                / d;
            *v = f0 - mean;
        }
        return Ok(Attribution::single("occlusion", values, k));
    }

    require_causal(model, "temporal occlusion")?;
    let seq = model.predict_sequence(&batched(x)?)?;
    let mut targets = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let row = &seq.data()[t * c..(t + 1) * c];
        let k = target.resolve(model, row)?;
        targets.push(k);
        let xc = crop(x, t + 1)?;
        let per = (t + 1) * n;
        let mut series = Vec::with_capacity(per * n * reps.len());
        for i in 0..n {
            for r in &reps {
                let start = series.len();
                series.extend_from_slice(xc.data());
                series[start + t * n + i] = r.data()[t * n + i];
            }
        }
        let out = predict_many(model, &series, t + 1, n)?;
        for i in 0..n {
            let mean = (0..reps.len())
                .map(|j| out[(i * reps.len() + j) * c + k])
                .sum::<f64>()
                / d;
            values.data_mut()[t * n + i] = row[k] - mean;
        }
    }
    Ok(Attribution {
        method: "occlusion".into(),
        values,
        targets,
        per_step: None,
    })
}
