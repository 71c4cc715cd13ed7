use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major array of `f64` values.
///
/// Tensors are immutable once built; graph operations always allocate
/// fresh outputs.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero-sized dimension in {shape:?}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// One-dimensional tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copies index range `start..end` of the leading axis.
    pub fn narrow_leading(&self, start: usize, end: usize) -> Result<Self> {
        self.narrow(0, start, end)
    }

    pub fn narrow(&self, axis: usize, start: usize, end: usize) -> Result<Self> {
        if axis >= self.rank() || start >= end || end > self.shape[axis] {
            return Err(Error::invalid(format!(
                "cannot take [{start}, {end}) on axis {axis} of {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let dim = self.shape[axis];
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            data.extend_from_slice(&self.data[base + start * inner..base + end * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = width;
        Ok(Self { shape, data })
    }

    /// Concatenates along the leading axis.
    pub fn stack_leading(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let tail = &first.shape[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() != first.rank() || &p.shape[1..] != tail {
                return Err(Error::invalid(format!(
                    "cannot stack {:?} onto {:?}",
                    p.shape, first.shape
                )));
            }
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = lead;
        Ok(Self { shape, data })
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn narrow_middle_axis() {
        let t = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let n = t.narrow(1, 1, 3).unwrap();
        assert_eq!(n.shape(), &[2, 2, 2]);
        assert_eq!(n.data(), &[2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn stack_leading_concatenates() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = Tensor::stack_leading(&[a, b]).unwrap();
        assert_eq!(s.shape(), &[3, 2]);
        assert_eq!(s.at(&[2, 1]), 6.0);
    }
}
