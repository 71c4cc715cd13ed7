//! Local outlier factor of a query point against a reference set.
//!
//! Neighbourhoods follow the original definition: the k-distance
//! neighbourhood keeps every point tied with the k-th nearest one. Local
//! reachability densities of the reference points are computed once, so
//! scoring a query costs one pass over the set.

use crate::error::{Error, Result};

/// Floor on the mean reachability distance; below it the density is clamped.
pub const LOF_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LofScore {
    pub value: f64,
    /// True when some density in the computation hit the [`LOF_EPSILON`] clamp.
    pub clamped: bool,
}

#[derive(Clone, Debug)]
pub struct LofIndex {
    points: Vec<Vec<f64>>,
    k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
    lrd_clamped: Vec<bool>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// k-th smallest of `d` (1-based k) and the indices within that distance.
fn neighbourhood(d: &[(usize, f64)], k: usize) -> (f64, Vec<usize>) {
    let mut sorted: Vec<f64> = d.iter().map(|p| p.1).collect();
    sorted.sort_by(f64::total_cmp);
    let kd = sorted[k - 1];
    (kd, d.iter().filter(|p| p.1 <= kd).map(|p| p.0).collect())
}

fn density(mean_reach: f64) -> (f64, bool) {
    if mean_reach < LOF_EPSILON {
        (1.0 / LOF_EPSILON, true)
    } else {
        (1.0 / mean_reach, false)
    }
}

impl LofIndex {
    pub fn new(points: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("LOF needs k >= 1"));
        }
        if points.len() < k + 1 {
            return Err(Error::invalid(format!(
                "LOF with k = {k} needs at least {} reference points, got {}",
                k + 1,
                points.len()
            )));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("LOF reference points must share a dimension and be finite"));
        }
        let m = points.len();
        let dist: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| distance(&points[i], &points[j])).collect())
            .collect();
        let hoods: Vec<(f64, Vec<usize>)> = (0..m)
            .map(|i| {
                let others: Vec<(usize, f64)> =
                    (0..m).filter(|&j| j != i).map(|j| (j, dist[i][j])).collect();
                neighbourhood(&others, k)
            })
            .collect();
        let k_distance: Vec<f64> = hoods.iter().map(|h| h.0).collect();
        let (lrd, lrd_clamped) = hoods
            .iter()
            .enumerate()
            .map(|(i, (_, hood))| {
                let reach: f64 = hood.iter().map(|&o| k_distance[o].max(dist[i][o])).sum();
                density(reach / hood.len() as f64)
            })
            .unzip();
        Ok(Self {
            points,
            k,
            k_distance,
            lrd,
            lrd_clamped,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// LOF of a query that is not itself part of the reference set.
    pub fn score(&self, x: &[f64]) -> Result<LofScore> {
        if x.len() != self.points[0].len() {
            return Err(Error::invalid(format!(
                "LOF query has {} coordinates, reference points have {}",
                x.len(),
                self.points[0].len()
            )));
        }
        let d: Vec<(usize, f64)> = self.points.iter().map(|p| distance(x, p)).enumerate().collect();
        let (_, hood) = neighbourhood(&d, self.k);
        let reach: f64 = hood.iter().map(|&o| self.k_distance[o].max(d[o].1)).sum();
        let (own, mut clamped) = density(reach / hood.len() as f64);
        let mean_lrd = hood.iter().map(|&o| self.lrd[o]).sum::<f64>() / hood.len() as f64;
        clamped |= hood.iter().any(|&o| self.lrd_clamped[o]);
        Ok(LofScore {
            value: mean_lrd / own,
            clamped,
        })
    }

    /// `1 / max(1, LOF(x))`: 1 for inliers, small for outliers.
    pub fn similarity(&self, x: &[f64]) -> Result<f64> {
        Ok(similarity_score(self.score(x)?.value))
    }
}

pub fn similarity_score(lof: f64) -> f64 {
    1.0 / lof.max(1.0)
}

/// LOF of `x` against `points` with `k` neighbours.
pub fn lof_score(x: &[f64], points: &[Vec<f64>], k: usize) -> Result<LofScore> {
    LofIndex::new(points.to_vec(), k)?.score(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct transcription of the definitions, recomputing everything per call.
    fn brute_lof(x: &[f64], set: &[Vec<f64>], k: usize) -> f64 {
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
        };
        // Point `i` of the set (None = the query) and its candidate neighbours.
        let coords = |i: Option<usize>| -> Vec<f64> { i.map_or(x.to_vec(), |j| set[j].clone()) };
        let kdist_and_hood = |i: Option<usize>| -> (f64, Vec<usize>) {
            let me = coords(i);
            let mut ds: Vec<(usize, f64)> = (0..set.len())
                .filter(|&j| Some(j) != i)
                .map(|j| (j, dist(&me, &set[j])))
                .collect();
            ds.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let kd = ds[k - 1].1;
            (kd, ds.into_iter().filter(|p| p.1 <= kd).map(|p| p.0).collect())
        };
        let lrd = |i: Option<usize>| -> f64 {
            let me = coords(i);
            let (_, hood) = kdist_and_hood(i);
            let mean = hood
                .iter()
                .map(|&o| kdist_and_hood(Some(o)).0.max(dist(&me, &set[o])))
                .sum::<f64>()
                / hood.len() as f64;
            1.0 / mean.max(1e-12)
        };
        let (_, hood) = kdist_and_hood(None);
        hood.iter().map(|&o| lrd(Some(o))).sum::<f64>() / hood.len() as f64 / lrd(None)
    }

    fn grid(n: usize) -> Vec<Vec<f64>> {
        (0..n * n).map(|i| vec![(i / n) as f64, (i % n) as f64]).collect()
    }

    #[test]
    fn grid_centre_is_an_inlier() {
        let g = grid(5);
        let s = lof_score(&[2.0, 2.0], &g, 4).unwrap();
        assert!((s.value - 1.0).abs() <= 0.2, "{}", s.value);
        assert!(!s.clamped);
    }

    #[test]
    fn matches_brute_force_on_grids() {
        let g = grid(5);
        let queries = [[2.0, 2.0], [0.0, 0.0], [4.5, 1.2], [-3.0, 7.0], [2.5, 2.5]];
        for k in 1..6 {
            for q in &queries {
                let fast = lof_score(q, &g, k).unwrap().value;
                let slow = brute_lof(q, &g, k);
                assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0), "k={k} q={q:?}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn far_point_is_an_outlier() {
        let cluster: Vec<Vec<f64>> = (0..9).map(|i| vec![(i % 3) as f64 * 0.05, (i / 3) as f64 * 0.05]).collect();
        // Cluster diameter is about 0.14; the query sits 100 diameters away.
        let s = lof_score(&[14.0, 0.0], &cluster, 3).unwrap();
        assert!(s.value > 10.0, "{}", s.value);
        assert!(similarity_score(s.value) < 0.1);
    }

    #[test]
    fn duplicates_are_clamped_to_one() {
        let copies = vec![vec![1.0, -2.0]; 4];
        let s = lof_score(&[1.0, -2.0], &copies, 3).unwrap();
        assert_eq!(s.value, 1.0);
        assert!(s.clamped);
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(lof_score(&[0.0], &[vec![0.0], vec![1.0]], 2).is_err());
        assert!(lof_score(&[0.0], &[vec![0.0], vec![1.0]], 0).is_err());
    }
}
