//! Small reverse-mode differentiation toolkit over `(batch, channels, length)` tensors.
//!
//! Every layer exposes `forward` and a `backward` that takes the cached
//! forward inputs, returns the input gradient and accumulates parameter
//! gradients into a zero-initialized twin of the layer.

pub mod adam;
pub mod block;
pub mod conv;
pub mod gradcheck;
pub mod network;
pub mod prelu;
pub mod subpixel;
pub mod tensor;

pub use adam::Adam;
pub use block::{Block, BlockCache, BlockKind, BlockSpec};
pub use conv::Conv1d;
pub use network::{Network, NetworkSpec};
pub use prelu::Prelu;
pub use subpixel::{subpixel_downsample, subpixel_upsample};
pub use tensor::Tensor;
