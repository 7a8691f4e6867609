use rand::Rng;
use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const KERNEL_SIZE: usize = 9;

/// 1-D convolution with "same" zero padding and stride 1 or 2.
///
/// Weights are laid out `(out_ch, in_ch, kernel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Taps of a strided convolution that read one input phase, as a stride-1 sub-kernel.
struct Phase {
    phase: usize,
    taps: Vec<usize>,
    pad: usize,
}

/// Padded phase-row layout of one input item.
struct Layout {
    phases: Vec<Phase>,
    /// Samples per phase row, also the output length.
    plen: usize,
    /// Zeros before each phase row.
    margin: usize,
    /// Longest sub-kernel.
    width: usize,
    row_stride: usize,
}

/// Dot products of `x` with rows `o0..o0 + R` of `g`, eight independent
/// accumulators per row so the loop vectorizes.
#[inline]
fn dots<T: Scalar, const R: usize>(g: &[T], len: usize, o0: usize, x: &[T]) -> [T; R] {
    let rows: [&[T]; R] = std::array::from_fn(|q| &g[(o0 + q) * len..][..len]);
    let n = len;
    let mut acc = [[T::zero(); 8]; R];
    let mut i = 0;
    while i + 8 <= n {
        let xs = &x[i..i + 8];
        for (a, row) in acc.iter_mut().zip(&rows) {
            let gs = &row[i..i + 8];
            for l in 0..8 {
                a[l] += gs[l] * xs[l];
            }
        }
        i += 8;
    }
    std::array::from_fn(|q| {
        let mut sum = T::zero();
        for (&gv, &xv) in rows[q][i..n].iter().zip(&x[i..n]) {
            sum += gv * xv;
        }
        for a in acc[q] {
            sum += a;
        }
        sum
    })
}

/// Stride-1 correlation of many zero-padded input rows into many output rows:
/// `out[q][i] += sum_r sum_s w[q][r][s] * x[r * row_stride + offsets[r] + i + s]`.
///
/// `w` has one `width`-long slot per (output, input) pair of which the first
/// `taps[r]` entries are used. Output rows are `out_stride` apart, a multiple
/// of eight, and every position of them is written; input rows must be
/// padded far enough to the right to cover that.
struct RowBank<'a, T> {
    x: &'a [T],
    row_stride: usize,
    offsets: &'a [usize],
    taps: &'a [usize],
    w: &'a [T],
    width: usize,
}

impl<T: Scalar> RowBank<'_, T> {
    fn apply(&self, out: &mut [T], out_stride: usize) {
        let rows = out.len() / out_stride;
        let mut q = 0;
        while q + 4 <= rows {
            self.rows::<4>(out, out_stride, q);
            q += 4;
        }
        for q in q..rows {
            self.rows::<1>(out, out_stride, q);
        }
    }

    fn rows<const R: usize>(&self, out: &mut [T], out_stride: usize, q0: usize) {
        let nr = self.taps.len();
        for i in (0..out_stride).step_by(8) {
            let mut acc = [[T::zero(); 8]; R];
            for r in 0..nr {
                let taps = self.taps[r];
                let wr: [&[T]; R] = std::array::from_fn(|q| &self.w[((q0 + q) * nr + r) * self.width..][..taps]);
                let xr = &self.x[r * self.row_stride + self.offsets[r] + i..][..taps + 7];
                for s in 0..taps {
                    let xs = &xr[s..s + 8];
                    for (acc, w) in acc.iter_mut().zip(&wr) {
                        let wv = w[s];
                        for l in 0..8 {
                            acc[l] += wv * xs[l];
                        }
                    }
                }
            }
            for (q, acc) in acc.iter().enumerate() {
                for (o, &a) in out[(q0 + q) * out_stride + i..][..8].iter_mut().zip(acc) {
                    *o += a;
                }
            }
        }
    }
}

/// Rounds up to whole eight-lane blocks.
fn lanes8(n: usize) -> usize {
    n.div_ceil(8) * 8
}

impl<T: Scalar> Conv1d<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        assert!(kernel % 2 == 1 && kernel <= 63, "kernel must be odd and at most 63");
        assert!(stride == 1 || stride == 2, "stride must be 1 or 2");
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight: vec![T::zero(); out_ch * in_ch * kernel],
            bias: vec![T::zero(); out_ch],
        }
    }

    /// Uniform init in `±1/sqrt(fan_in)`, zero bias.
    pub fn init(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(in_ch, out_ch, kernel, stride);
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        for w in &mut conv.weight {
            *w = T::lit(rng.gen_range(-bound..bound));
        }
        conv
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_ch, self.out_ch, self.kernel, self.stride)
    }

    pub fn out_len(&self, in_len: usize) -> usize {
        in_len.div_ceil(self.stride)
    }

    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_ch,
                x.channels()
            )));
        }
        if x.length() == 0 {
            return Err(Error::ShapeMismatch("conv input has zero length".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let in_len = x.length();
        let out_len = self.out_len(in_len);
        let layout = self.layout(in_len);
        let nr = self.in_ch * self.stride;
        let width = layout.width;
        // Sub-kernels `[o][c * stride + phase][s]`.
        let mut w = vec![T::zero(); self.out_ch * nr * width];
        let (mut taps, mut offsets) = (vec![0; nr], vec![0; nr]);
        for c in 0..self.in_ch {
            for ph in &layout.phases {
                let r = c * self.stride + ph.phase;
                taps[r] = ph.taps.len();
                offsets[r] = layout.margin - ph.pad;
                for o in 0..self.out_ch {
                    for (s, &t) in ph.taps.iter().enumerate() {
                        w[(o * nr + r) * width + s] = self.weight[(o * self.in_ch + c) * self.kernel + t];
                    }
                }
            }
        }
        let opad = lanes8(out_len);
        let mut out = Tensor::zeros(x.batch(), self.out_ch, out_len);
        out.data_mut()
            .par_chunks_mut(self.out_ch * out_len)
            .zip(x.data().par_chunks(self.in_ch * in_len))
            .for_each(|(o, xi)| {
                let rows = self.phase_rows(xi, in_len, &layout);
                let mut acc = vec![T::zero(); self.out_ch * opad];
                for (row, &b) in acc.chunks_exact_mut(opad).zip(&self.bias) {
                    row.fill(b);
                }
                RowBank {
                    x: &rows,
                    row_stride: layout.row_stride,
                    offsets: &offsets,
                    taps: &taps,
                    w: &w,
                    width,
                }
                .apply(&mut acc, opad);
                for (orow, arow) in o.chunks_exact_mut(out_len).zip(acc.chunks_exact(opad)) {
                    orow.copy_from_slice(&arow[..out_len]);
                }
            });
        Ok(out)
    }

    /// Groups taps by the input phase they read: tap `t` reads `x[i*stride + t - pad]`.
    fn phases(&self) -> Vec<Phase> {
        let (p, st) = (self.pad(), self.stride as isize);
        (0..st)
            .filter_map(|phase| {
                let taps: Vec<usize> = (0..self.kernel)
                    .filter(|&t| (t as isize - p).rem_euclid(st) == phase)
                    .collect();
                let first = (*taps.first()? as isize - p).div_euclid(st);
                Some(Phase {
                    phase: phase as usize,
                    taps,
                    pad: (-first) as usize,
                })
            })
            .collect()
    }

    fn layout(&self, in_len: usize) -> Layout {
        let phases = self.phases();
        let width = phases.iter().map(|p| p.taps.len()).max().unwrap_or(1);
        let margin = phases.iter().map(|p| p.pad).max().unwrap_or(0);
        let plen = in_len.div_ceil(self.stride);
        Layout {
            row_stride: margin + lanes8(plen) + width,
            plen,
            margin,
            width,
            phases,
        }
    }

    /// Input rows split by phase and zero padded:
    /// `rows[(c * stride + phase) * row_stride + margin + j] = x[c][j * stride + phase]`.
    fn phase_rows(&self, x: &[T], in_len: usize, layout: &Layout) -> Vec<T> {
        let st = self.stride;
        let mut rows = vec![T::zero(); self.in_ch * st * layout.row_stride];
        for (c, xrow) in x.chunks_exact(in_len).enumerate() {
            for ph in 0..st {
                let dst = &mut rows[(c * st + ph) * layout.row_stride + layout.margin..];
                for (d, &v) in dst.iter_mut().zip(xrow.iter().skip(ph).step_by(st)) {
                    *d = v;
                }
            }
        }
        rows
    }

    /// Returns the input gradient and accumulates weight and bias gradients into `grads`.
    ///
    /// Per-item parameter gradients are reduced in batch order, so the result
    /// does not depend on the thread count.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        self.check(x)?;
        let in_len = x.length();
        let out_len = self.out_len(in_len);
        if grad_out.shape() != [x.batch(), self.out_ch, out_len] {
            return Err(Error::ShapeMismatch(format!(
                "conv output gradient has shape {:?}, expected {:?}",
                grad_out.shape(),
                [x.batch(), self.out_ch, out_len]
            )));
        }
        let layout = self.layout(in_len);
        // Per phase, flipped sub-kernels `[c][o][s]` for the input gradient.
        let flipped: Vec<Vec<T>> = layout
            .phases
            .iter()
            .map(|ph| {
                let n = ph.taps.len();
                let mut w = vec![T::zero(); self.in_ch * self.out_ch * n];
                for c in 0..self.in_ch {
                    for o in 0..self.out_ch {
                        for (s, &t) in ph.taps.iter().enumerate() {
                            w[(c * self.out_ch + o) * n + n - 1 - s] = self.weight[(o * self.in_ch + c) * self.kernel + t];
                        }
                    }
                }
                w
            })
            .collect();
        let mut grad_in = x.zeros_like();
        let partials: Vec<(Vec<T>, Vec<T>)> = grad_in
            .data_mut()
            .par_chunks_mut(self.in_ch * in_len)
            .zip(x.data().par_chunks(self.in_ch * in_len))
            .zip(grad_out.data().par_chunks(self.out_ch * out_len))
            .map(|((gi, xi), go)| self.backward_item(xi, go, gi, in_len, &layout, &flipped))
            .collect();
        for (gw, gb) in partials {
            for (a, b) in grads.weight.iter_mut().zip(gw) {
                *a += b;
            }
            for (a, b) in grads.bias.iter_mut().zip(gb) {
                *a += b;
            }
        }
        Ok(grad_in)
    }

    fn backward_item(
        &self,
        x: &[T],
        gout: &[T],
        gin: &mut [T],
        in_len: usize,
        layout: &Layout,
        flipped: &[Vec<T>],
    ) -> (Vec<T>, Vec<T>) {
        let (k, st, plen) = (self.kernel, self.stride, layout.plen);
        let out_len = plen;
        let rows = self.phase_rows(x, in_len, layout);
        let mut gw = vec![T::zero(); self.weight.len()];
        let mut gb = vec![T::zero(); self.out_ch];
        for (o, grow) in gout.chunks_exact(out_len).enumerate() {
            gb[o] = grow.iter().copied().sum();
        }
        for c in 0..self.in_ch {
            for ph in &layout.phases {
                let row = (c * st + ph.phase) * layout.row_stride + layout.margin - ph.pad;
                for (s, &t) in ph.taps.iter().enumerate() {
                    // Sub-tap s reads x[i + s - pad]; the padding supplies the zeros.
                    let xs = &rows[row + s..][..out_len];
                    let mut o = 0;
                    while o + 4 <= self.out_ch {
                        let sums = dots::<T, 4>(gout, out_len, o, xs);
                        for (q, v) in sums.into_iter().enumerate() {
                            gw[((o + q) * self.in_ch + c) * k + t] += v;
                        }
                        o += 4;
                    }
                    for o in o..self.out_ch {
                        gw[(o * self.in_ch + c) * k + t] += dots::<T, 1>(gout, out_len, o, xs)[0];
                    }
                }
            }
        }

        // Input gradient: the output gradient correlated with each phase's flipped sub-kernel.
        let gmargin = layout.phases.iter().map(|p| p.taps.len() - 1 - p.pad).max().unwrap_or(0);
        let ppad = lanes8(plen);
        let gstride = gmargin + ppad + layout.width;
        let mut gpad = vec![T::zero(); self.out_ch * gstride];
        for (dst, src) in gpad.chunks_exact_mut(gstride).zip(gout.chunks_exact(out_len)) {
            dst[gmargin..gmargin + out_len].copy_from_slice(src);
        }
        let mut acc = vec![T::zero(); self.in_ch * ppad];
        for (ph, w) in layout.phases.iter().zip(flipped) {
            let n = ph.taps.len();
            let taps = vec![n; self.out_ch];
            let offsets = vec![gmargin - (n - 1 - ph.pad); self.out_ch];
            acc.fill(T::zero());
            RowBank {
                x: &gpad,
                row_stride: gstride,
                offsets: &offsets,
                taps: &taps,
                w,
                width: n,
            }
            .apply(&mut acc, ppad);
            for (girow, arow) in gin.chunks_exact_mut(in_len).zip(acc.chunks_exact(ppad)) {
                for (g, &a) in girow.iter_mut().skip(ph.phase).step_by(st).zip(arow) {
                    *g = a;
                }
            }
        }
        (gw, gb)
    }

    pub fn params(&self) -> Vec<&[T]> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_close, numeric_grad};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, b: usize, c: usize, l: usize) -> Tensor<f64> {
        Tensor::from_vec(b, c, l, (0..b * c * l).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct definition, used as an oracle for the sliced implementation.
    fn naive(conv: &Conv1d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let out_len = conv.out_len(x.length());
        let mut out = Tensor::zeros(x.batch(), conv.out_ch, out_len);
        let pad = (conv.kernel / 2) as isize;
        let data = out.data_mut();
        for b in 0..x.batch() {
            for o in 0..conv.out_ch {
                for i in 0..out_len {
                    let mut acc = conv.bias[o];
                    for c in 0..conv.in_ch {
                        for t in 0..conv.kernel {
                            let j = (i * conv.stride) as isize + t as isize - pad;
                            if j >= 0 && (j as usize) < x.length() {
                                acc += conv.weight[(o * conv.in_ch + c) * conv.kernel + t]
                                    * x.row(b, c)[j as usize];
                            }
                        }
                    }
                    data[(b * conv.out_ch + o) * out_len + i] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut conv = Conv1d::<f64>::zeros(1, 1, 9, 1);
        conv.weight[4] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 2, 1, 37);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn stride_two_halves_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv1d::<f32>::init(3, 4, 9, 2, &mut rng);
        let x = Tensor::zeros(1, 3, 512);
        assert_eq!(conv.forward(&x).unwrap().shape(), [1, 4, 256]);
        assert!(conv.forward(&Tensor::zeros(1, 2, 512)).is_err());
    }

    #[test]
    fn matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, kernel, len) in [(1, 9, 20), (2, 9, 20), (2, 9, 7), (1, 1, 5), (2, 1, 9), (1, 9, 3)] {
            let mut conv = Conv1d::<f64>::init(2, 3, kernel, stride, &mut rng);
            conv.bias = vec![0.1, -0.2, 0.3];
            let x = random_tensor(&mut rng, 2, 2, len);
            let got = conv.forward(&x).unwrap();
            let want = naive(&conv, &x);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for stride in [1, 2] {
            let conv = Conv1d::<f64>::init(2, 3, 9, stride, &mut rng);
            let x = random_tensor(&mut rng, 2, 2, 14);
            let probe = random_tensor(&mut rng, 2, 3, conv.out_len(14));
            let loss = |c: &Conv1d<f64>, x: &Tensor<f64>| -> f64 {
                c.forward(x).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
            };
            let mut grads = conv.zeros_like();
            let gin = conv.backward(&x, &probe, &mut grads).unwrap();

            let fd_w = numeric_grad(&conv.weight, |w| {
                let mut c = conv.clone();
                c.weight = w.to_vec();
                loss(&c, &x)
            });
            assert_close(&grads.weight, &fd_w, 1e-4);
            let fd_b = numeric_grad(&conv.bias, |b| {
                let mut c = conv.clone();
                c.bias = b.to_vec();
                loss(&c, &x)
            });
            assert_close(&grads.bias, &fd_b, 1e-4);
            let fd_x = numeric_grad(x.data(), |v| {
                loss(&conv, &Tensor::from_vec(2, 2, 14, v.to_vec()).unwrap())
            });
            assert_close(gin.data(), &fd_x, 1e-4);
        }
    }
}
