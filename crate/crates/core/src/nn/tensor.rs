use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense `(batch, channels, length)` tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(batch: usize, channels: usize, length: usize) -> Self {
        Self {
            shape: [batch, channels, length],
            data: vec![T::zero(); batch * channels * length],
        }
    }

    pub fn from_vec(batch: usize, channels: usize, length: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * channels * length {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill ({batch}, {channels}, {length})",
                data.len()
            )));
        }
        Ok(Self {
            shape: [batch, channels, length],
            data,
        })
    }

    /// Stacks equal-length single-channel rows into a `(rows, 1, len)` tensor.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != len) {
            return Err(Error::ShapeMismatch(format!(
                "row of length {} among rows of length {len}",
                bad.len()
            )));
        }
        Ok(Self {
            shape: [rows.len(), 1, len],
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn length(&self) -> usize {
        self.shape[2]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// All channels of batch element `b`, contiguous.
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.shape[1] * self.shape[2];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn row(&self, b: usize, c: usize) -> &[T] {
        let l = self.shape[2];
        let start = (b * self.shape[1] + c) * l;
        &self.data[start..start + l]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}
