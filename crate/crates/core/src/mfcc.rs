//! Multi-resolution MFCCs and the perceptual distance built on them.
//!
//! Each 512-sample window is one FFT frame: power spectrum, triangular mel
//! filterbank, log with a floor, then an orthonormal DCT-II keeping every
//! coefficient. The perceptual loss averages the mean-squared MFCC difference
//! over several filterbank sizes and is differentiated analytically.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub filterbank_sizes: Vec<usize>,
    pub fft_size: usize,
    pub sample_rate: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            filterbank_sizes: vec![8, 16, 32, 128],
            fft_size: 512,
            sample_rate: 16_000.0,
            f_min: 0.0,
            f_max: 8_000.0,
            log_floor: 1e-8,
        }
    }
}

impl MfccConfig {
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular filter: weights for the contiguous bins starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilter {
    pub start: usize,
    pub weights: Vec<f64>,
}

impl MelFilter {
    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Dense row over all power-spectrum bins.
    pub fn dense(&self, num_bins: usize) -> Vec<f64> {
        let mut row = vec![0.0; num_bins];
        row[self.start..self.start + self.weights.len()].copy_from_slice(&self.weights);
        row
    }
}

/// Triangular filters with centers equally spaced on the mel scale.
///
/// Filters narrower than one FFT bin would sample no bin at all; those fall
/// back to a unit weight on the bin nearest their center.
pub fn mel_filterbank(num_filters: usize, cfg: &MfccConfig) -> Vec<MelFilter> {
    assert!(num_filters >= 1, "mel filterbank needs at least one filter");
    let bins = cfg.num_bins();
    let bin_hz = cfg.sample_rate / cfg.fft_size as f64;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (num_filters + 1) as f64))
        .collect();
    (1..=num_filters)
        .map(|m| {
            let (left, center, right) = (edges[m - 1], edges[m], edges[m + 1]);
            let dense: Vec<f64> = (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f > left && f <= center {
                        (f - left) / (center - left)
                    } else if f > center && f < right {
                        (right - f) / (right - center)
                    } else {
                        0.0
                    }
                })
                .collect();
            match dense.iter().position(|&w| w > 0.0) {
                Some(start) => {
                    let end = dense.iter().rposition(|&w| w > 0.0).unwrap() + 1;
                    MelFilter {
                        start,
                        weights: dense[start..end].to_vec(),
                    }
                }
                None => MelFilter {
                    start: ((center / bin_hz).round() as usize).min(bins - 1),
                    weights: vec![1.0],
                },
            }
        })
        .collect()
}

/// Orthonormal DCT-II matrix, row-major `[k][n]`.
pub fn dct2_matrix(size: usize) -> Vec<f64> {
    let mut m = vec![0.0; size * size];
    for k in 0..size {
        let scale = if k == 0 {
            (1.0 / size as f64).sqrt()
        } else {
            (2.0 / size as f64).sqrt()
        };
        for n in 0..size {
            m[k * size + n] = scale
                * (std::f64::consts::PI * k as f64 * (2 * n + 1) as f64 / (2 * size) as f64).cos();
        }
    }
    m
}

struct Bank<T> {
    filters: Vec<(usize, Vec<T>)>,
    dct: Vec<T>,
}

impl<T: Scalar> Bank<T> {
    fn size(&self) -> usize {
        self.filters.len()
    }
}

/// Intermediate values of one window's MFCC pipeline, kept for the backward pass.
struct Analysis<T> {
    spectrum: Vec<Complex<T>>,
    /// Per filterbank: (log mel energies' derivative mask 1/e or 0, coefficients).
    banks: Vec<(Vec<T>, Vec<T>)>,
}

/// Precomputed filterbanks, DCT matrices and FFT plan shared by all MFCC calls.
pub struct Mfcc<T: Scalar> {
    cfg: MfccConfig,
    fft: Arc<dyn Fft<T>>,
    banks: Vec<Bank<T>>,
}

impl<T: Scalar> Mfcc<T> {
    pub fn new(cfg: &MfccConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        let banks = cfg
            .filterbank_sizes
            .iter()
            .map(|&size| Bank {
                filters: mel_filterbank(size, cfg)
                    .into_iter()
                    .map(|f| (f.start, f.weights.into_iter().map(T::lit).collect()))
                    .collect(),
                dct: dct2_matrix(size).into_iter().map(T::lit).collect(),
            })
            .collect();
        Self {
            cfg: cfg.clone(),
            fft,
            banks,
        }
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    fn spectrum(&self, window: &[T]) -> Vec<Complex<T>> {
        assert!(window.len() <= self.cfg.fft_size, "window longer than fft size");
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.cfg.fft_size];
        for (b, &v) in buf.iter_mut().zip(window) {
            b.re = v;
        }
        self.fft.process(&mut buf);
        buf
    }

    fn analyze(&self, window: &[T]) -> Analysis<T> {
        let spectrum = self.spectrum(window);
        let power: Vec<T> = spectrum[..self.cfg.num_bins()]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        let floor = T::lit(self.cfg.log_floor);
        let banks = self
            .banks
            .iter()
            .map(|bank| {
                let mut inv = Vec::with_capacity(bank.size());
                let logs: Vec<T> = bank
                    .filters
                    .iter()
                    .map(|(start, w)| {
                        let e: T = w.iter().zip(&power[*start..]).map(|(&a, &p)| a * p).sum();
                        if e > floor {
                            inv.push(e.recip());
                            e.ln()
                        } else {
                            inv.push(T::zero());
                            floor.ln()
                        }
                    })
                    .collect();
                let n = bank.size();
                let coeffs = (0..n)
                    .map(|k| {
                        bank.dct[k * n..(k + 1) * n]
                            .iter()
                            .zip(&logs)
                            .map(|(&d, &l)| d * l)
                            .sum()
                    })
                    .collect();
                (inv, coeffs)
            })
            .collect();
        Analysis { spectrum, banks }
    }

    /// MFCC vector of `window` for the filterbank at `bank_index`.
    pub fn coefficients(&self, window: &[T], bank_index: usize) -> Vec<T> {
        self.analyze(window).banks.swap_remove(bank_index).1
    }

    /// MFCC vectors for every configured filterbank.
    pub fn all_coefficients(&self, window: &[T]) -> Vec<Vec<T>> {
        self.analyze(window).banks.into_iter().map(|b| b.1).collect()
    }

    /// Mean over filterbanks of the mean-squared MFCC difference.
    pub fn perceptual_loss(&self, x: &[T], y: &[T]) -> T {
        let mx = self.analyze(x);
        let my = self.analyze(y);
        self.distance(&mx, &my)
    }

    fn distance(&self, mx: &Analysis<T>, my: &Analysis<T>) -> T {
        let terms = mx
            .banks
            .iter()
            .zip(&my.banks)
            .map(|((_, a), (_, b))| {
                let sq: T = a.iter().zip(b).map(|(&p, &q)| (p - q) * (p - q)).sum();
                sq / T::lit(a.len() as f64)
            })
            .sum::<T>();
        terms / T::lit(self.banks.len() as f64)
    }

    /// Perceptual loss and its gradient with respect to `y`.
    pub fn perceptual_loss_grad(&self, x: &[T], y: &[T]) -> (T, Vec<T>) {
        let mx = self.analyze(x);
        let my = self.analyze(y);
        let loss = self.distance(&mx, &my);

        let bins = self.cfg.num_bins();
        let mut power_grad = vec![T::zero(); bins];
        let nb = T::lit(self.banks.len() as f64);
        for (bank, ((_, cx), (inv, cy))) in self.banks.iter().zip(mx.banks.iter().zip(&my.banks)) {
            let n = bank.size();
            let scale = T::lit(2.0) / (T::lit(n as f64) * nb);
            let dcoef: Vec<T> = cy.iter().zip(cx).map(|(&a, &b)| scale * (a - b)).collect();
            // Transposed DCT, then through the log and filterbank.
            for (m, (start, w)) in bank.filters.iter().enumerate() {
                let mut dlog = T::zero();
                for k in 0..n {
                    dlog += bank.dct[k * n + m] * dcoef[k];
                }
                let de = dlog * inv[m];
                if de != T::zero() {
                    for (j, &wj) in w.iter().enumerate() {
                        power_grad[start + j] += de * wj;
                    }
                }
            }
        }

        // d|Y_k|^2 / dy_n = 2 Re(conj(Y_k) e^{-2 pi i k n / N}), summed with a forward FFT.
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.cfg.fft_size];
        for k in 0..bins {
            buf[k] = my.spectrum[k].conj() * power_grad[k];
        }
        self.fft.process(&mut buf);
        let two = T::lit(2.0);
        let grad = buf[..y.len()].iter().map(|c| two * c.re).collect();
        (loss, grad)
    }
}

/// MFCC vector of a single window with `num_filters` filters.
pub fn mfcc(window: &[f64], num_filters: usize, cfg: &MfccConfig) -> Vec<f64> {
    let cfg = MfccConfig {
        filterbank_sizes: vec![num_filters],
        ..cfg.clone()
    };
    Mfcc::<f64>::new(&cfg).coefficients(window, 0)
}
