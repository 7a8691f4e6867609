use rand::Rng;

use super::block::{Block, BlockCache, BlockSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Block lists for the encoder and decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub encoder: Vec<BlockSpec>,
    pub decoder: Vec<BlockSpec>,
}

impl NetworkSpec {
    /// `channel_change(1->C)`, `residual_blocks` residual blocks, one resampling
    /// block and `channel_change(C->1)`; the encoder downsamples and the decoder
    /// mirrors it with an upsample.
    pub fn standard(channels: usize, residual_blocks: usize) -> Self {
        let stack = |middle: BlockSpec| {
            let mut v = vec![BlockSpec::channel_change(1, channels)];
            v.extend(std::iter::repeat(BlockSpec::residual(channels)).take(residual_blocks));
            v.push(middle);
            v.push(BlockSpec::channel_change(channels, 1));
            v
        };
        Self {
            encoder: stack(BlockSpec::downsample(channels)),
            decoder: stack(BlockSpec::upsample(channels)),
        }
    }

    /// Widest channel count in either half.
    pub fn channels(&self) -> usize {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .map(|b| b.in_ch.max(b.out_ch))
            .max()
            .unwrap_or(1)
    }
}

pub type Caches<T> = Vec<BlockCache<T>>;

/// Encoder and decoder stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub encoder: Vec<Block<T>>,
    pub decoder: Vec<Block<T>>,
}

fn run<T: Scalar>(blocks: &[Block<T>], x: &Tensor<T>) -> Result<Tensor<T>> {
    blocks.iter().try_fold(x.clone(), |h, b| b.forward(&h))
}

fn run_cached<T: Scalar>(blocks: &[Block<T>], x: &Tensor<T>) -> Result<(Tensor<T>, Caches<T>)> {
    let mut caches = Vec::with_capacity(blocks.len());
    let mut h = x.clone();
    for b in blocks {
        let (next, cache) = b.forward_cached(&h)?;
        caches.push(cache);
        h = next;
    }
    Ok((h, caches))
}

fn run_backward<T: Scalar>(
    blocks: &[Block<T>],
    caches: &[BlockCache<T>],
    grad: &Tensor<T>,
    grads: &mut [Block<T>],
) -> Result<Tensor<T>> {
    let mut g = grad.clone();
    for ((b, cache), gb) in blocks.iter().zip(caches).zip(grads.iter_mut()).rev() {
        g = b.backward(cache, &g, gb)?;
    }
    Ok(g)
}

fn check_single_channel<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<()> {
    if x.channels() != 1 || x.length() == 0 || x.length() % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{what} expects (batch, 1, even length), got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

impl<T: Scalar> Network<T> {
    pub fn new(spec: &NetworkSpec, rng: &mut impl Rng) -> Self {
        Self {
            encoder: spec.encoder.iter().map(|&s| Block::build(s, rng)).collect(),
            decoder: spec.decoder.iter().map(|&s| Block::build(s, rng)).collect(),
        }
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            encoder: self.encoder.iter().map(Block::spec).collect(),
            decoder: self.decoder.iter().map(Block::spec).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.iter().map(Block::zeros_like).collect(),
            decoder: self.decoder.iter().map(Block::zeros_like).collect(),
        }
    }

    /// `(B, 1, 512)` windows to `(B, 1, 256)` pre-quantization codes.
    pub fn encode(&self, windows: &Tensor<T>) -> Result<Tensor<T>> {
        check_single_channel(windows, "encoder")?;
        run(&self.encoder, windows)
    }

    /// `(B, 1, 256)` codes to `(B, 1, 512)` windows.
    pub fn decode(&self, codes: &Tensor<T>) -> Result<Tensor<T>> {
        check_single_channel(codes, "decoder")?;
        run(&self.decoder, codes)
    }

    pub fn encode_cached(&self, windows: &Tensor<T>) -> Result<(Tensor<T>, Caches<T>)> {
        check_single_channel(windows, "encoder")?;
        run_cached(&self.encoder, windows)
    }

    pub fn decode_cached(&self, codes: &Tensor<T>) -> Result<(Tensor<T>, Caches<T>)> {
        check_single_channel(codes, "decoder")?;
        run_cached(&self.decoder, codes)
    }

    pub fn encoder_backward(&self, caches: &[BlockCache<T>], grad: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        run_backward(&self.encoder, caches, grad, &mut grads.encoder)
    }

    pub fn decoder_backward(&self, caches: &[BlockCache<T>], grad: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        run_backward(&self.decoder, caches, grad, &mut grads.decoder)
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.encoder.iter().chain(&self.decoder).flat_map(Block::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(Block::params_mut)
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Copies every parameter into a network of another element type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut out = Network::<U>::new(&self.spec(), &mut rng);
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::lit(s.as_f64());
            }
        }
        out
    }
}
