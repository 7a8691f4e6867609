//! The four residual block types the encoder and decoder are built from.

use rand::Rng;

use super::conv::{Conv1d, KERNEL_SIZE};
use super::prelu::Prelu;
use super::subpixel::{subpixel_downsample, subpixel_upsample};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Residual,
    ChannelChange,
    Downsample,
    Upsample,
}

impl BlockKind {
    pub fn code(self) -> u8 {
        match self {
            BlockKind::Residual => 0,
            BlockKind::ChannelChange => 1,
            BlockKind::Downsample => 2,
            BlockKind::Upsample => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => BlockKind::Residual,
            1 => BlockKind::ChannelChange,
            2 => BlockKind::Downsample,
            3 => BlockKind::Upsample,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl BlockSpec {
    pub fn residual(ch: usize) -> Self {
        Self { kind: BlockKind::Residual, in_ch: ch, out_ch: ch }
    }

    pub fn channel_change(in_ch: usize, out_ch: usize) -> Self {
        Self { kind: BlockKind::ChannelChange, in_ch, out_ch }
    }

    pub fn downsample(ch: usize) -> Self {
        Self { kind: BlockKind::Downsample, in_ch: ch, out_ch: ch }
    }

    pub fn upsample(ch: usize) -> Self {
        Self { kind: BlockKind::Upsample, in_ch: ch, out_ch: ch }
    }
}

/// A residual block.
///
/// * residual: `x + act2(conv2(act1(conv1(x))))`
/// * channel change: `act(conv(x)) + proj(x)` with a width-1 projection
/// * downsample: the same with stride 2 on both paths
/// * upsample: `shuffle(act(conv(x)) + proj(x))`, both paths producing `2C`
///   channels that the subpixel shuffle folds into twice the length
#[derive(Debug, Clone, PartialEq)]
pub enum Block<T> {
    Residual {
        conv1: Conv1d<T>,
        act1: Prelu<T>,
        conv2: Conv1d<T>,
        act2: Prelu<T>,
    },
    Projected {
        kind: BlockKind,
        conv: Conv1d<T>,
        act: Prelu<T>,
        proj: Conv1d<T>,
    },
}

#[derive(Debug, Clone)]
pub enum BlockCache<T> {
    Residual {
        x: Tensor<T>,
        h1: Tensor<T>,
        a1: Tensor<T>,
        h2: Tensor<T>,
    },
    Projected {
        x: Tensor<T>,
        h: Tensor<T>,
    },
}

impl<T: Scalar> Block<T> {
    pub fn build(spec: BlockSpec, rng: &mut impl Rng) -> Self {
        let k = KERNEL_SIZE;
        match spec.kind {
            BlockKind::Residual => Block::Residual {
                conv1: Conv1d::init(spec.in_ch, spec.in_ch, k, 1, rng),
                act1: Prelu::new(spec.in_ch),
                conv2: Conv1d::init(spec.in_ch, spec.in_ch, k, 1, rng),
                act2: Prelu::new(spec.in_ch),
            },
            BlockKind::ChannelChange | BlockKind::Downsample | BlockKind::Upsample => {
                let stride = if spec.kind == BlockKind::Downsample { 2 } else { 1 };
                let out = if spec.kind == BlockKind::Upsample { 2 * spec.out_ch } else { spec.out_ch };
                Block::Projected {
                    kind: spec.kind,
                    conv: Conv1d::init(spec.in_ch, out, k, stride, rng),
                    act: Prelu::new(out),
                    proj: Conv1d::init(spec.in_ch, out, 1, stride, rng),
                }
            }
        }
    }

    pub fn spec(&self) -> BlockSpec {
        match self {
            Block::Residual { conv1, .. } => BlockSpec::residual(conv1.in_ch),
            Block::Projected { kind, conv, .. } => BlockSpec {
                kind: *kind,
                in_ch: conv.in_ch,
                out_ch: if *kind == BlockKind::Upsample { conv.out_ch / 2 } else { conv.out_ch },
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Block::Residual { conv1, act1, conv2, act2 } => Block::Residual {
                conv1: conv1.zeros_like(),
                act1: act1.zeros_like(),
                conv2: conv2.zeros_like(),
                act2: act2.zeros_like(),
            },
            Block::Projected { kind, conv, act, proj } => Block::Projected {
                kind: *kind,
                conv: conv.zeros_like(),
                act: act.zeros_like(),
                proj: proj.zeros_like(),
            },
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        match self {
            Block::Residual { conv1, act1, conv2, act2 } => {
                let h1 = conv1.forward(x)?;
                let a1 = act1.forward(&h1)?;
                let h2 = conv2.forward(&a1)?;
                let mut y = act2.forward(&h2)?;
                y.add_assign(x);
                Ok((y, BlockCache::Residual { x: x.clone(), h1, a1, h2 }))
            }
            Block::Projected { kind, conv, act, proj } => {
                if *kind == BlockKind::Downsample && x.length() % 2 != 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "downsample block needs even length, got {}",
                        x.length()
                    )));
                }
                let h = conv.forward(x)?;
                let mut y = act.forward(&h)?;
                y.add_assign(&proj.forward(x)?);
                if *kind == BlockKind::Upsample {
                    y = subpixel_upsample(&y)?;
                }
                Ok((y, BlockCache::Projected { x: x.clone(), h }))
            }
        }
    }

    /// Backpropagates `grad_out`, accumulating parameter gradients into `grads`
    /// (a block of identical structure).
    pub fn backward(&self, cache: &BlockCache<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        match (self, cache, grads) {
            (
                Block::Residual { conv1, act1, conv2, act2 },
                BlockCache::Residual { x, h1, a1, h2 },
                Block::Residual { conv1: g1, act1: ga1, conv2: g2, act2: ga2 },
            ) => {
                let g_h2 = act2.backward(h2, grad_out, ga2)?;
                let g_a1 = conv2.backward(a1, &g_h2, g2)?;
                let g_h1 = act1.backward(h1, &g_a1, ga1)?;
                let mut g_x = conv1.backward(x, &g_h1, g1)?;
                g_x.add_assign(grad_out);
                Ok(g_x)
            }
            (
                Block::Projected { kind, conv, act, proj },
                BlockCache::Projected { x, h },
                Block::Projected { conv: gc, act: ga, proj: gp, .. },
            ) => {
                let g_sum = if *kind == BlockKind::Upsample {
                    subpixel_downsample(grad_out)?
                } else {
                    grad_out.clone()
                };
                let g_h = act.backward(h, &g_sum, ga)?;
                let mut g_x = conv.backward(x, &g_h, gc)?;
                g_x.add_assign(&proj.backward(x, &g_sum, gp)?);
                Ok(g_x)
            }
            _ => Err(Error::ShapeMismatch("block, cache and gradient kinds disagree".into())),
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Block::Residual { conv1, act1, conv2, act2 } => {
                let mut p = conv1.params();
                p.extend(act1.params());
                p.extend(conv2.params());
                p.extend(act2.params());
                p
            }
            Block::Projected { conv, act, proj, .. } => {
                let mut p = conv.params();
                p.extend(act.params());
                p.extend(proj.params());
                p
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Block::Residual { conv1, act1, conv2, act2 } => {
                let mut p = conv1.params_mut();
                p.extend(act1.params_mut());
                p.extend(conv2.params_mut());
                p.extend(act2.params_mut());
                p
            }
            Block::Projected { conv, act, proj, .. } => {
                let mut p = conv.params_mut();
                p.extend(act.params_mut());
                p.extend(proj.params_mut());
                p
            }
        }
    }
}
