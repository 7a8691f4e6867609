//! Training objective and bitrate estimate.
//!
//! The loss is `w_mse * MSE + w_perceptual * P + w_quant * Q + w_entropy * E`
//! where `P` is the multi-resolution MFCC distance, `Q` penalizes soft
//! assignments away from one-hot and `E` is the entropy of the minibatch
//! mean assignment in bits.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::framing::{OVERLAP, WINDOW_LEN};
use crate::mfcc::{Mfcc, MfccConfig};
use crate::scalar::Scalar;

/// Quantized symbols per 512-sample window.
pub const SYMBOLS_PER_WINDOW: usize = 256;

/// Floor applied inside `log2` so empty bins contribute `0 * log 0 = 0`.
pub const ENTROPY_LOG_FLOOR: f64 = 1e-12;
/// Floor under the square root when differentiating the quantization penalty.
pub const SQRT_GRAD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mse: f64,
    pub perceptual: f64,
    pub quantization: f64,
    pub entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mse: 30.0,
            perceptual: 5.0,
            quantization: 10.0,
            entropy: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub mse: f64,
    pub perceptual: f64,
    pub quantization_penalty: f64,
    pub entropy_bits: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.mse, self.perceptual, self.quantization_penalty, self.entropy_bits, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn mse_loss<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Ok(T::zero());
    }
    let sum: T = x.iter().zip(y).map(|(&a, &b)| (b - a) * (b - a)).sum();
    Ok(sum / T::lit(x.len() as f64))
}

/// Gradient of [`mse_loss`] with respect to `y`: `2 (y - x) / len`.
pub fn mse_grad<T: Scalar>(x: &[T], y: &[T]) -> Vec<T> {
    let scale = T::lit(2.0 / x.len().max(1) as f64);
    x.iter().zip(y).map(|(&a, &b)| scale * (b - a)).collect()
}

/// Mean over symbols of `(sum_j sqrt(c_j)) - 1`.
pub fn quantization_penalty<T: Scalar>(assignments: &[T], num_bins: usize) -> T {
    let symbols = assignments.len() / num_bins;
    if symbols == 0 {
        return T::zero();
    }
    let total: T = assignments
        .chunks_exact(num_bins)
        .map(|s| s.iter().map(|&c| c.max(T::zero()).sqrt()).sum::<T>() - T::one())
        .sum();
    total / T::lit(symbols as f64)
}

pub fn quantization_penalty_grad<T: Scalar>(assignments: &[T], num_bins: usize) -> Vec<T> {
    let symbols = (assignments.len() / num_bins).max(1);
    let scale = T::lit(0.5 / symbols as f64);
    let floor = T::lit(SQRT_GRAD_FLOOR);
    assignments
        .iter()
        .map(|&c| scale / c.max(floor).sqrt())
        .collect()
}

/// Mean soft assignment over the minibatch and its entropy in bits.
pub fn entropy_estimate<T: Scalar>(assignments: &[T], num_bins: usize) -> (Vec<T>, T) {
    let h = mean_histogram(assignments, num_bins);
    let bits = entropy_bits(&h);
    (h, bits)
}

pub fn mean_histogram<T: Scalar>(assignments: &[T], num_bins: usize) -> Vec<T> {
    let symbols = assignments.len() / num_bins;
    let mut h = vec![T::zero(); num_bins];
    for s in assignments.chunks_exact(num_bins) {
        for (a, &v) in h.iter_mut().zip(s) {
            *a += v;
        }
    }
    let inv = T::one() / T::lit(symbols.max(1) as f64);
    h.iter_mut().for_each(|v| *v *= inv);
    h
}

pub fn entropy_bits<T: Scalar>(h: &[T]) -> T {
    let floor = T::lit(ENTROPY_LOG_FLOOR);
    h.iter().map(|&p| -p * p.max(floor).log2()).sum()
}

/// Gradient of the entropy estimate with respect to every assignment.
pub fn entropy_grad<T: Scalar>(assignments: &[T], num_bins: usize) -> Vec<T> {
    let symbols = (assignments.len() / num_bins).max(1);
    let h = mean_histogram(assignments, num_bins);
    let floor = T::lit(ENTROPY_LOG_FLOOR);
    let inv_ln2 = T::lit(std::f64::consts::LOG2_E);
    let inv_n = T::one() / T::lit(symbols as f64);
    let dh: Vec<T> = h
        .iter()
        .map(|&p| {
            if p >= floor {
                -(p.log2() + inv_ln2) * inv_n
            } else {
                -floor.log2() * inv_n
            }
        })
        .collect();
    let mut out = Vec::with_capacity(assignments.len());
    for _ in 0..assignments.len() / num_bins {
        out.extend_from_slice(&dh);
    }
    out
}

/// Windows per second times symbols per window times bits per symbol.
pub fn bitrate_estimate(entropy_bits: f64) -> f64 {
    let windows_per_sec = 16_000.0 / (WINDOW_LEN - OVERLAP) as f64;
    windows_per_sec * SYMBOLS_PER_WINDOW as f64 * entropy_bits
}

/// Loss value plus gradients with respect to the reconstruction and the assignments.
#[derive(Debug, Clone)]
pub struct LossGrads<T> {
    pub report: LossReport,
    /// Flattened like the reconstruction batch.
    pub recon: Vec<T>,
    /// Flattened like the assignments; empty when quantization is off.
    pub assignments: Vec<T>,
}

/// The full objective over a batch of windows.
pub struct Objective<T: Scalar> {
    pub mfcc: Mfcc<T>,
    pub window_len: usize,
}

impl<T: Scalar> Objective<T> {
    pub fn new(window_len: usize) -> Self {
        Self {
            mfcc: Mfcc::new(&MfccConfig::default()),
            window_len,
        }
    }

    /// Per-window perceptual losses and gradients, averaged over the batch.
    fn perceptual(&self, x: &[T], y: &[T]) -> (T, Vec<T>) {
        let n = self.window_len;
        let windows = x.len() / n;
        let per: Vec<(T, Vec<T>)> = x
            .par_chunks(n)
            .zip(y.par_chunks(n))
            .map(|(a, b)| self.mfcc.perceptual_loss_grad(a, b))
            .collect();
        let inv = T::one() / T::lit(windows.max(1) as f64);
        let mut loss = T::zero();
        let mut grad = Vec::with_capacity(x.len());
        for (l, g) in per {
            loss += l;
            grad.extend(g.into_iter().map(|v| v * inv));
        }
        (loss * inv, grad)
    }

    pub fn perceptual_loss(&self, x: &[T], y: &[T]) -> T {
        let n = self.window_len;
        let per: Vec<T> = x
            .par_chunks(n)
            .zip(y.par_chunks(n))
            .map(|(a, b)| self.mfcc.perceptual_loss(a, b))
            .collect();
        per.into_iter().sum::<T>() / T::lit((x.len() / n).max(1) as f64)
    }

    /// Report only, no gradients.
    pub fn report(
        &self,
        x: &[T],
        y: &[T],
        assignments: Option<&[T]>,
        num_bins: usize,
        weights: &LossWeights,
    ) -> Result<LossReport> {
        let mse = mse_loss(x, y)?.as_f64();
        let perceptual = self.perceptual_loss(x, y).as_f64();
        let (quant, bits) = match assignments {
            Some(s) => (
                quantization_penalty(s, num_bins).as_f64(),
                entropy_estimate(s, num_bins).1.as_f64(),
            ),
            None => (0.0, 0.0),
        };
        Ok(combine(mse, perceptual, quant, bits, weights, assignments.is_some()))
    }

    /// Loss report and gradients. `assignments` is `None` while quantization is off.
    pub fn evaluate(
        &self,
        x: &[T],
        y: &[T],
        assignments: Option<&[T]>,
        num_bins: usize,
        weights: &LossWeights,
    ) -> Result<LossGrads<T>> {
        let mse = mse_loss(x, y)?;
        let (perceptual, p_grad) = self.perceptual(x, y);
        let wm = T::lit(weights.mse);
        let wp = T::lit(weights.perceptual);
        let recon: Vec<T> = mse_grad(x, y)
            .into_iter()
            .zip(p_grad)
            .map(|(a, b)| wm * a + wp * b)
            .collect();
        let (quant, bits, grad_s) = match assignments {
            Some(s) => {
                let q = quantization_penalty(s, num_bins);
                let (_, e) = entropy_estimate(s, num_bins);
                let wq = T::lit(weights.quantization);
                let we = T::lit(weights.entropy);
                let g: Vec<T> = quantization_penalty_grad(s, num_bins)
                    .into_iter()
                    .zip(entropy_grad(s, num_bins))
                    .map(|(a, b)| wq * a + we * b)
                    .collect();
                (q.as_f64(), e.as_f64(), g)
            }
            None => (0.0, 0.0, Vec::new()),
        };
        Ok(LossGrads {
            report: combine(mse.as_f64(), perceptual.as_f64(), quant, bits, weights, assignments.is_some()),
            recon,
            assignments: grad_s,
        })
    }
}

/// Weighted sum; the quantization and entropy terms only count when quantization is on.
pub fn combine(
    mse: f64,
    perceptual: f64,
    quantization_penalty: f64,
    entropy_bits: f64,
    weights: &LossWeights,
    quantization_on: bool,
) -> LossReport {
    let mut total = weights.mse * mse + weights.perceptual * perceptual;
    if quantization_on {
        total += weights.quantization * quantization_penalty + weights.entropy * entropy_bits;
    }
    LossReport {
        mse,
        perceptual,
        quantization_penalty: if quantization_on { quantization_penalty } else { 0.0 },
        entropy_bits: if quantization_on { entropy_bits } else { 0.0 },
        total,
    }
}
