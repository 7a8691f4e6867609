use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const INIT_SLOPE: f64 = 0.25;

/// Parametric ReLU with one trainable negative-side slope per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Prelu<T> {
    pub slope: Vec<T>,
}

impl<T: Scalar> Prelu<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            slope: vec![T::lit(INIT_SLOPE); channels],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            slope: vec![T::zero(); self.slope.len()],
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.slope.len() {
            return Err(Error::ShapeMismatch(format!(
                "prelu has {} slopes, input has {} channels",
                self.slope.len(),
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let mut out = x.clone();
        let (c, l) = (x.channels(), x.length());
        for (row, vals) in out.data_mut().chunks_exact_mut(l).enumerate() {
            let a = self.slope[row % c];
            for v in vals {
                *v = if *v <= T::zero() { *v * a } else { *v };
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        self.check(x)?;
        let (c, l) = (x.channels(), x.length());
        let mut grad_in = grad_out.clone();
        for (row, (gs, xs)) in grad_in.data_mut().chunks_exact_mut(l).zip(x.data().chunks_exact(l)).enumerate() {
            let ch = row % c;
            let a = self.slope[ch];
            let mut acc = T::zero();
            for (g, &v) in gs.iter_mut().zip(xs) {
                if v <= T::zero() {
                    acc += *g * v;
                    *g *= a;
                }
            }
            grads.slope[ch] += acc;
        }
        Ok(grad_in)
    }

    pub fn params(&self) -> Vec<&[T]> {
        vec![&self.slope]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.slope]
    }
}
