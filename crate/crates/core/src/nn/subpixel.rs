//! Subpixel (pixel-shuffle) upsampling along the time axis.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `(B, 2C, L) -> (B, C, 2L)`: output `[c][2i + r]` is input `[2c + r][i]`.
pub fn subpixel_upsample<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c2, l] = x.shape();
    if c2 % 2 != 0 {
        return Err(Error::OddChannels(c2));
    }
    let c = c2 / 2;
    let mut out = Tensor::zeros(b, c, 2 * l);
    let data = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let dst = &mut data[(bi * c + ci) * 2 * l..][..2 * l];
            for r in 0..2 {
                let src = x.row(bi, 2 * ci + r);
                for (i, &v) in src.iter().enumerate() {
                    dst[2 * i + r] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Inverse permutation of [`subpixel_upsample`]; also its gradient.
pub fn subpixel_downsample<T: Scalar>(y: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, l2] = y.shape();
    if l2 % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("subpixel inverse needs even length, got {l2}")));
    }
    let l = l2 / 2;
    let mut out = Tensor::zeros(b, 2 * c, l);
    let data = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let src = y.row(bi, ci);
            for r in 0..2 {
                let dst = &mut data[(bi * 2 * c + 2 * ci + r) * l..][..l];
                for (i, d) in dst.iter_mut().enumerate() {
                    *d = src[2 * i + r];
                }
            }
        }
    }
    Ok(out)
}
