//! Metrics against known saliency.
//!
//! Each instance is min-max normalised to `[0, 1]` first. AUP and AUR average
//! precision and recall of the rule `a >= j / 101` over `j = 1..=100`;
//! AUPRC is the step-wise average precision with tied scores grouped, and
//! ROC-AUC uses average ranks. Batch values are means over instances.

use std::cmp::Ordering;

use crate::autodiff::Tensor;
use crate::datasets::{SaliencyTruth, TruthKind};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

pub const THRESHOLDS: usize = 100;

pub const BINARY_METRICS: [&str; 4] = ["aup", "aur", "auprc", "roc_auc"];
pub const ERROR_METRICS: [&str; 3] = ["mae", "mse", "rmse"];

/// Min-max normalisation; a constant input maps to all zeros.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

fn positives(truth: &[f64]) -> Result<usize> {
    let p = truth.iter().filter(|&&v| v == 1.0).count();
    if truth.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("binary truth must contain only 0 and 1"));
    }
    if p == 0 || p == truth.len() {
        return Err(Error::Undefined(format!(
            "truth is all {}: precision-recall and ROC curves are undefined",
            if p == 0 { "zero" } else { "one" }
        )));
    }
    Ok(p)
}

/// Mean precision and recall over the threshold grid.
pub fn aup_aur(scores: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    let p = positives(truth)? as f64;
    let (mut aup, mut aur) = (0.0, 0.0);
    for j in 1..=THRESHOLDS {
        let tau = j as f64 / (THRESHOLDS + 1) as f64;
        let (mut selected, mut tp) = (0usize, 0usize);
        for (s, t) in scores.iter().zip(truth) {
            if *s >= tau {
                selected += 1;
                if *t == 1.0 {
                    tp += 1;
                }
            }
        }
        aup += if selected == 0 { 1.0 } else { tp as f64 / selected as f64 };
        aur += tp as f64 / p;
    }
    Ok((aup / THRESHOLDS as f64, aur / THRESHOLDS as f64))
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Average precision, `sum (R_n - R_{n-1}) P_n` over distinct score thresholds.
pub fn average_precision(scores: &[f64], truth: &[f64]) -> Result<f64> {
    let p = positives(truth)? as f64;
    let order = descending(scores);
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += truth[order[i]];
            seen += 1.0;
            i += 1;
        }
        let recall = tp / p;
        ap += (recall - prev_recall) * tp / seen;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Area under the ROC curve via average ranks, ties counting one half.
pub fn roc_auc(scores: &[f64], truth: &[f64]) -> Result<f64> {
    let p = positives(truth)?;
    let n_neg = truth.len() - p;
    let mut order = descending(scores);
    order.reverse();
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let start = i;
        while i < order.len() && scores[order[i]] == s {
            i += 1;
        }
        let avg = (start + 1 + i) as f64 / 2.0;
        rank_sum += order[start..i].iter().filter(|&&j| truth[j] == 1.0).count() as f64 * avg;
    }
    let p = p as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

/// Brings a static `[T, N]` and a temporal `[T, T, N]` tensor to a common
/// shape by taking the last row of the temporal one.
fn align(attr: &Tensor, truth: &Tensor) -> Result<(Tensor, Tensor)> {
    let last_row = |t: &Tensor| -> Result<Tensor> {
        let s = t.shape();
        t.narrow(0, s[0] - 1, s[0])?.reshape(&s[1..])
    };
    let (a, t) = match (attr.rank(), truth.rank()) {
        (3, 2) => (last_row(attr)?, truth.clone()),
        (2, 3) => (attr.clone(), last_row(truth)?),
        _ => (attr.clone(), truth.clone()),
    };
    if a.shape() != t.shape() {
        return Err(Error::invalid(format!(
            "attribution shape {:?} does not match truth shape {:?}",
            attr.shape(),
            truth.shape()
        )));
    }
    Ok((a, t))
}

/// Metrics of one instance. Binary truth yields all seven metrics, real
/// truth only the error metrics.
pub fn white_box_instance(attr: &Tensor, truth: &Tensor, kind: TruthKind) -> Result<Vec<(&'static str, f64)>> {
    let (a, t) = align(attr, truth)?;
    if !a.is_finite() {
        return Err(Error::invalid("attribution contains non-finite values"));
    }
    let scores = min_max(a.data());
    let truth = t.data();
    let mut out = Vec::with_capacity(7);
    if kind == TruthKind::Binary {
        let (aup, aur) = aup_aur(&scores, truth)?;
        out.push(("aup", aup));
        out.push(("aur", aur));
        out.push(("auprc", average_precision(&scores, truth)?));
        out.push(("roc_auc", roc_auc(&scores, truth)?));
    }
    let n = scores.len() as f64;
    let mae = scores.iter().zip(truth).map(|(s, t)| (s - t).abs()).sum::<f64>() / n;
    let mse = scores.iter().zip(truth).map(|(s, t)| (s - t).powi(2)).sum::<f64>() / n;
    out.push(("mae", mae));
    out.push(("mse", mse));
    out.push(("rmse", mse.sqrt()));
    Ok(out)
}

/// Batch means of the per-instance metrics of `attrs: [B, ...]`.
pub fn white_box_metrics(attrs: &Tensor, truth: &SaliencyTruth) -> Result<MetricReport> {
    let b = attrs.shape().first().copied().unwrap_or(0);
    if b == 0 || b != truth.len() {
        return Err(Error::invalid(format!(
            "{b} attributions for {} truth instances",
            truth.len()
        )));
    }
    let per: usize = attrs.shape()[1..].iter().product();
    let mut sums: Vec<(&'static str, f64)> = Vec::new();
    for i in 0..b {
        let a = Tensor::new(attrs.shape()[1..].to_vec(), attrs.data()[i * per..(i + 1) * per].to_vec())?;
        let m = white_box_instance(&a, &truth.instance(i), truth.kind)?;
        if sums.is_empty() {
            sums = m;
        } else {
            for (s, (_, v)) in sums.iter_mut().zip(m) {
                s.1 += v;
            }
        }
    }
    let mut report = MetricReport::new(serde_json::json!({ "truth": truth.kind }));
    for (name, v) in sums {
        report.insert(name, v / b as f64)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn t2(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::new(vec![1, n], data).unwrap()
    }

    /// Pairwise definition: fraction of positive-negative pairs ordered correctly.
    fn auc_pairs(s: &[f64], t: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if t[i] == 1.0 && t[j] == 0.0 {
                    den += 1.0;
                    num += match s[i].partial_cmp(&s[j]).unwrap() {
                        Ordering::Greater => 1.0,
                        Ordering::Equal => 0.5,
                        Ordering::Less => 0.0,
                    };
                }
            }
        }
        num / den
    }

    /// Mean over positives of the precision among cells scoring at least as high.
    fn ap_per_positive(s: &[f64], t: &[f64]) -> f64 {
        let pos: Vec<usize> = (0..s.len()).filter(|&i| t[i] == 1.0).collect();
        pos.iter()
            .map(|&i| {
                let sel: Vec<usize> = (0..s.len()).filter(|&j| s[j] >= s[i]).collect();
                sel.iter().filter(|&&j| t[j] == 1.0).count() as f64 / sel.len() as f64
            })
            .sum::<f64>()
            / pos.len() as f64
    }

    #[test]
    fn hand_computed_curves() {
        let s = [0.9, 0.8, 0.7, 0.6];
        let t = [1.0, 0.0, 1.0, 0.0];
        assert!((average_precision(&s, &t).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert!((roc_auc(&s, &t).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_inverted() {
        let truth = t2(vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let m = white_box_instance(&truth, &truth, TruthKind::Binary).unwrap();
        let get = |m: &[(&str, f64)], k: &str| m.iter().find(|(n, _)| *n == k).unwrap().1;
        assert_eq!(get(&m, "auprc"), 1.0);
        assert_eq!(get(&m, "roc_auc"), 1.0);
        assert_eq!(get(&m, "mae"), 0.0);
        assert_eq!(get(&m, "aup"), 1.0);
        assert_eq!(get(&m, "aur"), 1.0);
        let inv = truth.map(|v| 1.0 - v);
        let m = white_box_instance(&inv, &truth, TruthKind::Binary).unwrap();
        assert_eq!(get(&m, "roc_auc"), 0.0);
    }

    #[test]
    fn degenerate_truth_is_an_error() {
        let a = t2(vec![0.1, 0.2, 0.3]);
        for truth in [t2(vec![0.0; 3]), t2(vec![1.0; 3])] {
            let err = white_box_instance(&a, &truth, TruthKind::Binary).unwrap_err();
            assert!(matches!(err, Error::Undefined(_)), "{err}");
        }
        // Real truth only has error metrics, which stay defined.
        let m = white_box_instance(&a, &t2(vec![0.0; 3]), TruthKind::Real).unwrap();
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn random_attributions_score_the_salient_fraction() {
        let n = 10_000;
        let p = 0.2;
        let truth: Vec<f64> = (0..n).map(|i| if i < (p * n as f64) as usize { 1.0 } else { 0.0 }).collect();
        let mut r = rng::seeded(17);
        let mean = (0..100)
            .map(|_| {
                let s: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
                average_precision(&s, &truth).unwrap()
            })
            .sum::<f64>()
            / 100.0;
        assert!((mean - p).abs() < 0.05, "{mean}");
    }

    #[test]
    fn temporal_attribution_uses_last_row() {
        let truth = t2(vec![1.0, 0.0]);
        let attr = Tensor::new(vec![2, 1, 2], vec![0.0, 5.0, 3.0, 1.0]).unwrap();
        let m = white_box_instance(&attr, &truth, TruthKind::Binary).unwrap();
        assert_eq!(m.iter().find(|(n, _)| *n == "roc_auc").unwrap().1, 1.0);
        let bad = t2(vec![1.0, 0.0, 0.0]);
        assert!(white_box_instance(&attr, &bad, TruthKind::Binary).is_err());
    }

    #[test]
    fn batch_report_averages() {
        let truth = SaliencyTruth {
            values: Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap(),
            kind: TruthKind::Binary,
        };
        let attrs = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = white_box_metrics(&attrs, &truth).unwrap();
        assert_eq!(r.get("roc_auc"), Some(0.5));
        assert_eq!(r.values.len(), 7);
    }

    proptest! {
        #[test]
        fn ranking_metrics_match_oracles(
            cells in prop::collection::vec((0u8..6, any::<bool>()), 3..40),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let s: Vec<f64> = cells.iter().map(|(v, _)| *v as f64).collect();
            let t: Vec<f64> = cells.iter().map(|(_, b)| if *b { 1.0 } else { 0.0 }).collect();
            prop_assume!(t.iter().any(|v| *v == 1.0) && t.iter().any(|v| *v == 0.0));
            let auc = roc_auc(&s, &t).unwrap();
            let ap = average_precision(&s, &t).unwrap();
            prop_assert!((auc - auc_pairs(&s, &t)).abs() < 1e-12);
            prop_assert!((ap - ap_per_positive(&s, &t)).abs() < 1e-12);
            // Strictly monotone rescaling leaves both unchanged.
            let r: Vec<f64> = s.iter().map(|v| scale * v + shift).collect();
            prop_assert_eq!(roc_auc(&r, &t).unwrap(), auc);
            prop_assert_eq!(average_precision(&r, &t).unwrap(), ap);
        }
    }
}
