//! Weighted least squares for the surrogate-model explainers.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const RIDGE_FALLBACK: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct LeastSquaresFit {
    pub coefficients: Vec<f64>,
    /// True when the normal equations were singular and the ridge term was used.
    pub ridge: bool,
}

/// Minimises `sum_r w_r (y_r - design_r . beta)^2` through the normal equations.
///
/// `design` is row-major with `cols` columns. A singular system is retried
/// with `RIDGE_FALLBACK` added to the diagonal.
pub fn weighted_least_squares(
    design: &[f64],
    cols: usize,
    targets: &[f64],
    weights: &[f64],
) -> Result<LeastSquaresFit> {
    let rows = targets.len();
    if cols == 0 || design.len() != rows * cols || weights.len() != rows {
        return Err(Error::invalid(format!(
            "least squares: {rows} targets, {} weights, {} design entries for {cols} columns",
            weights.len(),
            design.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("least squares weights must be finite and >= 0"));
    }
    let x = DMatrix::from_row_slice(rows, cols, design);
    let mut xtw = x.transpose();
    for (c, &w) in weights.iter().enumerate() {
        xtw.column_mut(c).scale_mut(w);
    }
    let normal = &xtw * &x;
    let rhs = &xtw * DVector::from_column_slice(targets);

    if let Some(solution) = solve_spd(&normal, &rhs) {
        return Ok(LeastSquaresFit {
            coefficients: solution.iter().copied().collect(),
            ridge: false,
        });
    }
    warn!("singular least-squares system ({cols} unknowns); retrying with ridge {RIDGE_FALLBACK}");
    let ridged = normal + DMatrix::identity(cols, cols) * RIDGE_FALLBACK;
    let solution = solve_spd(&ridged, &rhs)
        .or_else(|| ridged.clone().lu().solve(&rhs))
        .ok_or_else(|| Error::Undefined("least-squares system is singular even with ridge".into()))?;
    Ok(LeastSquaresFit {
        coefficients: solution.iter().copied().collect(),
        ridge: true,
    })
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d.abs()), hi.max(d.abs())));
    // Cholesky succeeds on numerically singular matrices; reject them by pivot ratio.
    if hi == 0.0 || lo / hi < 1e-7 {
        return None;
    }
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}
