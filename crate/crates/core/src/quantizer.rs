//! Softmax (soft-to-hard) scalar quantization.
//!
//! A scalar `x` gets the soft assignment `softmax(-sigma * |x - B_j|)` over
//! the bins `B`; its dot product with `B` is the dequantized value. The
//! temperature is stored as `ln(sigma)` so it stays positive under gradient
//! steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_BINS: usize = 32;
pub const INITIAL_SIGMA: f64 = 300.0;

/// Trainable bins and temperature shared by every symbol position.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer<T> {
    pub bins: Vec<T>,
    pub log_sigma: T,
}

/// Gradients for [`Quantizer`] parameters plus the code gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerGrads<T> {
    pub codes: Vec<T>,
    pub bins: Vec<T>,
    pub log_sigma: T,
}

impl<T: Scalar> Quantizer<T> {
    pub fn new(bins: Vec<T>, sigma: f64) -> Self {
        assert!(bins.len() >= 2, "quantizer needs at least two bins");
        assert!(sigma > 0.0, "temperature must be positive");
        Self {
            bins,
            log_sigma: T::lit(sigma.ln()),
        }
    }

    /// Evenly spaced bins over `[lo, hi]`.
    pub fn uniform(n: usize, lo: f64, hi: f64, sigma: f64) -> Self {
        let bins = (0..n)
            .map(|i| T::lit(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect();
        Self::new(bins, sigma)
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn sigma(&self) -> T {
        self.log_sigma.exp()
    }

    /// Writes the soft assignment of `x` into `out` (length `N`).
    pub fn soft_quantize_into(&self, x: T, out: &mut [T]) {
        let sigma = self.sigma();
        let mut max = T::neg_infinity();
        for (o, &b) in out.iter_mut().zip(&self.bins) {
            *o = -sigma * (x - b).abs();
            max = max.max(*o);
        }
        let mut sum = T::zero();
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }

    pub fn soft_quantize(&self, x: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.bins.len()];
        self.soft_quantize_into(x, &mut out);
        out
    }

    /// Soft assignments for every code, flattened `codes.len() x N`.
    pub fn soft_quantize_all(&self, codes: &[T]) -> Vec<T> {
        let n = self.bins.len();
        let mut out = vec![T::zero(); codes.len() * n];
        for (&x, s) in codes.iter().zip(out.chunks_exact_mut(n)) {
            self.soft_quantize_into(x, s);
        }
        out
    }

    /// `sum_j S_j B_j`.
    pub fn dequantize(&self, assignment: &[T]) -> T {
        assignment.iter().zip(&self.bins).map(|(&s, &b)| s * b).sum()
    }

    pub fn dequantize_all(&self, assignments: &[T]) -> Vec<T> {
        assignments
            .chunks_exact(self.bins.len())
            .map(|s| self.dequantize(s))
            .collect()
    }

    pub fn nearest_bin(&self, x: T) -> usize {
        let mut best = 0;
        for (j, &b) in self.bins.iter().enumerate() {
            if (x - b).abs() < (x - self.bins[best]).abs() {
                best = j;
            }
        }
        best
    }

    /// Backpropagates through `soft_quantize` and `dequantize`.
    ///
    /// `grad_assign` is the loss gradient with respect to each assignment
    /// (flattened like `assignments`), `grad_value` the gradient with respect
    /// to each dequantized value.
    pub fn backward(
        &self,
        codes: &[T],
        assignments: &[T],
        grad_assign: &[T],
        grad_value: &[T],
    ) -> QuantizerGrads<T> {
        let n = self.bins.len();
        let sigma = self.sigma();
        let mut grads = QuantizerGrads {
            codes: vec![T::zero(); codes.len()],
            bins: vec![T::zero(); n],
            log_sigma: T::zero(),
        };
        let mut g_s = vec![T::zero(); n];
        for (i, &x) in codes.iter().enumerate() {
            let s = &assignments[i * n..(i + 1) * n];
            let ga = &grad_assign[i * n..(i + 1) * n];
            let gv = grad_value[i];
            let mut dot = T::zero();
            for j in 0..n {
                g_s[j] = ga[j] + gv * self.bins[j];
                grads.bins[j] += gv * s[j];
                dot += s[j] * g_s[j];
            }
            let mut g_x = T::zero();
            for j in 0..n {
                // Gradient with respect to the logit -sigma * |x - B_j|.
                let g_logit = s[j] * (g_s[j] - dot);
                let diff = x - self.bins[j];
                let sign = if diff > T::zero() {
                    T::one()
                } else if diff < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                g_x -= g_logit * sigma * sign;
                grads.bins[j] += g_logit * sigma * sign;
                grads.log_sigma -= g_logit * sigma * diff.abs();
            }
            grads.codes[i] = g_x;
        }
        grads
    }

    pub fn cast<U: Scalar>(&self) -> Quantizer<U> {
        Quantizer {
            bins: self.bins.iter().map(|b| U::lit(b.as_f64())).collect(),
            log_sigma: U::lit(self.log_sigma.as_f64()),
        }
    }
}

/// Index of the largest component; ties go to the lowest index.
pub fn harden<T: Scalar>(assignment: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in assignment.iter().enumerate() {
        if v > assignment[best] {
            best = j;
        }
    }
    best
}

/// Result of [`kmeans_1d`], with the inertia after every Lloyd iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<f64>,
    pub inertia: Vec<f64>,
}

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

/// One-dimensional k-means with k-means++ seeding; centroids come back sorted.
pub fn kmeans_1d(samples: &[f64], k: usize, seed: u64) -> Result<KMeans> {
    let mut sorted = samples.to_vec();
    sorted.retain(|v| v.is_finite());
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if k == 0 || distinct.len() < k {
        return Err(Error::TooFewDistinctValues {
            needed: k,
            found: distinct.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![sorted[rng.gen_range(0..sorted.len())]];
    let mut d2: Vec<f64> = sorted.iter().map(|v| (v - centroids[0]).powi(2)).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let r = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > r {
                break;
            }
        }
        let c = sorted[pick.expect("distinct values remain uncovered")];
        centroids.push(c);
        for (d, v) in d2.iter_mut().zip(&sorted) {
            *d = d.min((v - c).powi(2));
        }
    }
    centroids.sort_by(f64::total_cmp);

    // Prefix sums make each Lloyd step O(k log n) on sorted data.
    let mut prefix = vec![0.0; sorted.len() + 1];
    let mut prefix_sq = vec![0.0; sorted.len() + 1];
    for (i, v) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    let ranges = |centroids: &[f64]| -> Vec<(usize, usize)> {
        let mut bounds = vec![0];
        for w in centroids.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            // Points exactly on a midpoint belong to the lower centroid.
            bounds.push(sorted.partition_point(|&v| v <= mid));
        }
        bounds.push(sorted.len());
        bounds.windows(2).map(|w| (w[0], w[1].max(w[0]))).collect()
    };
    let inertia_of = |centroids: &[f64]| -> f64 {
        ranges(centroids)
            .iter()
            .zip(centroids)
            .map(|(&(a, b), &c)| {
                let n = (b - a) as f64;
                prefix_sq[b] - prefix_sq[a] - 2.0 * c * (prefix[b] - prefix[a]) + n * c * c
            })
            .sum::<f64>()
            .max(0.0)
    };

    let mut inertia = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut moved = 0.0f64;
        let next: Vec<f64> = ranges(&centroids)
            .iter()
            .zip(&centroids)
            .map(|(&(a, b), &c)| {
                if b > a {
                    (prefix[b] - prefix[a]) / (b - a) as f64
                } else {
                    c
                }
            })
            .collect();
        for (old, new) in centroids.iter().zip(&next) {
            moved = moved.max((old - new).abs());
        }
        centroids = next;
        centroids.sort_by(f64::total_cmp);
        inertia.push(inertia_of(&centroids));
        if moved < KMEANS_TOL {
            break;
        }
    }
    Ok(KMeans { centroids, inertia })
}

/// Bin initialization: sorted k-means centroids of `samples`.
pub fn kmeans_init(samples: &[f32], n: usize, seed: u64) -> Result<Vec<f32>> {
    let wide: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
    Ok(kmeans_1d(&wide, n, seed)?
        .centroids
        .into_iter()
        .map(|c| c as f32)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_close, numeric_grad};
    use proptest::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn coincident_bin_is_one_hot() {
        let q = Quantizer::<f64>::new(vec![-1.0, 0.0, 1.0], 300.0);
        let s = q.soft_quantize(0.0);
        assert_eq!(s[1], 1.0);
        assert!(s[0] < (-300.0f64).exp() * 1.0001 && s[2] < (-300.0f64).exp() * 1.0001);
        assert_eq!(harden(&s), 1);
        assert_eq!(q.dequantize(&[0.0, 0.0, 1.0]), 1.0);
    }

    #[test]
    fn equidistant_split() {
        let q = Quantizer::<f64>::new(vec![0.0, 1.0], 300.0);
        let s = q.soft_quantize(0.5);
        assert!((s[0] - 0.5).abs() < 1e-12 && (s[1] - 0.5).abs() < 1e-12);
        assert!((q.dequantize(&s) - 0.5).abs() < 1e-12);
        assert_eq!(harden(&[0.5, 0.5]), 0);
    }

    #[test]
    fn low_temperature_values() {
        let q = Quantizer::<f64>::new(vec![-1.0, 0.0, 1.0], 2.0);
        let s = q.soft_quantize(0.25);
        let raw = [(-2.5f64).exp(), (-0.5f64).exp(), (-1.5f64).exp()];
        let z: f64 = raw.iter().sum();
        for (a, b) in s.iter().zip(raw) {
            assert!((a - b / z).abs() < 1e-14);
        }
        assert_eq!(harden(&[0.1, 0.7, 0.2]), 1);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let q = Quantizer::<f64>::new(vec![-0.7, -0.1, 0.2, 0.9], 3.0);
        let codes = vec![-0.5, 0.05, 0.4, 1.3];
        let probe_v = [0.3, -1.2, 0.8, 0.5];
        let probe_s: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 * 0.1 - 0.2).collect();
        let loss = |q: &Quantizer<f64>, codes: &[f64]| -> f64 {
            let s = q.soft_quantize_all(codes);
            let v = q.dequantize_all(&s);
            v.iter().zip(&probe_v).map(|(a, b)| a * b).sum::<f64>()
                + s.iter().zip(&probe_s).map(|(a, b)| a * b).sum::<f64>()
        };
        let s = q.soft_quantize_all(&codes);
        let g = q.backward(&codes, &s, &probe_s, &probe_v);
        assert_close(&g.codes, &numeric_grad(&codes, |c| loss(&q, c)), 1e-4);
        let fd_b = numeric_grad(&q.bins, |b| loss(&Quantizer { bins: b.to_vec(), ..q.clone() }, &codes));
        assert_close(&g.bins, &fd_b, 1e-4);
        let fd_s = numeric_grad(&[q.log_sigma], |s| {
            loss(&Quantizer { log_sigma: s[0], ..q.clone() }, &codes)
        });
        assert_close(&[g.log_sigma], &fd_s, 1e-4);
    }

    #[test]
    fn hard_limit_near_bins() {
        // Unit-spaced bins at sigma = 300: the competing bin is at least
        // 2 * delta further away, so the error is about exp(-600 * delta).
        let q = Quantizer::<f64>::uniform(5, -2.0, 2.0, 300.0);
        for i in 0..4000 {
            let x = -2.4 + 4.8 * i as f64 / 3999.0;
            let nearest = q.bins[q.nearest_bin(x)];
            let delta = 0.5 - (x - x.round()).abs();
            let err = (q.dequantize(&q.soft_quantize(x)) - nearest).abs();
            if x.abs() <= 2.0 && delta > 0.04 {
                assert!(err < 1e-10, "x {x} err {err}");
            }
            if x.abs() <= 2.0 && delta > 0.01 {
                assert!(err <= 2.0 * (-600.0 * delta).exp() + 1e-15, "x {x} err {err}");
            }
        }
    }

    #[test]
    fn kmeans_fixed_points() {
        let vals: Vec<f32> = (0..32).flat_map(|i| vec![i as f32 * 0.5 - 3.0; 3]).collect();
        let bins = kmeans_init(&vals, 32, 1).unwrap();
        let mut want: Vec<f32> = (0..32).map(|i| i as f32 * 0.5 - 3.0).collect();
        want.sort_by(f32::total_cmp);
        assert_eq!(bins, want);

        let bins = kmeans_init(&[0.0, 0.0, 0.0, 10.0, 10.0, 10.0], 2, 1).unwrap();
        assert_eq!(bins, vec![0.0, 10.0]);
        assert!(matches!(
            kmeans_init(&[1.0; 100], 2, 1),
            Err(Error::TooFewDistinctValues { needed: 2, found: 1 })
        ));
    }

    #[test]
    fn kmeans_inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..5 {
            let data: Vec<f64> = (0..5000)
                .map(|_| rng.gen_range(-1.0..1.0f64).powi(3) + if rng.gen_bool(0.3) { 2.0 } else { 0.0 })
                .collect();
            let km = kmeans_1d(&data, 16, trial).unwrap();
            assert!(km.centroids.windows(2).all(|w| w[0] <= w[1]));
            for w in km.inertia.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", km.inertia);
            }
        }
    }

    proptest! {
        #[test]
        fn assignments_sum_to_one(x in -50.0f64..50.0, sigma in 1e-3f64..1e6, spread in 0.01f64..10.0) {
            let q = Quantizer::<f64>::uniform(8, -spread, spread, sigma);
            let s = q.soft_quantize(x);
            prop_assert!(s.iter().all(|&v| v >= 0.0));
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn harden_picks_nearest_bin(x in -3.0f64..3.0) {
            let q = Quantizer::<f64>::new(vec![-2.1, -0.9, -0.2, 0.4, 1.3, 2.6], 300.0);
            prop_assert_eq!(harden(&q.soft_quantize(x)), q.nearest_bin(x));
        }
    }
}
