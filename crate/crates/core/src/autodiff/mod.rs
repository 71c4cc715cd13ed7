//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The primitive set is deliberately small: elementwise add/mul (with
//! leading-axis broadcasting only), matmul, reshape, slice, concat, the
//! sum/mean reductions, relu, softplus, sigmoid, tanh, softmax, softmax
//! cross-entropy and mean squared error. Everything else is composed.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, NodeId, Seed};
pub use tensor::Tensor;

pub(crate) use graph::{sigmoid, softmax_row};

use crate::error::{Error, Result};

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
///
/// Used as an oracle for [`Graph::backward`].
pub fn finite_diff_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_of_square() {
        let g = finite_diff_grad(|t| Ok(t.data()[0] * t.data()[0]), &Tensor::vector(vec![3.0]), 1e-5)
            .unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_of_constant() {
        let g = finite_diff_grad(|_| Ok(4.2), &Tensor::vector(vec![1.0, -2.0, 0.5]), 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_diff_rejects_bad_step() {
        assert!(finite_diff_grad(|_| Ok(0.0), &Tensor::scalar(1.0), 0.0).is_err());
    }
}
