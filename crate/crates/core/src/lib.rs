//! Learned end-to-end wideband speech codec.
//!
//! Raw 16 kHz speech is cut into 512-sample windows, mapped by a residual
//! convolutional encoder to 256 scalars per window, quantized with a
//! trainable softmax quantizer, entropy coded with a static range coder and
//! reconstructed by a mirrored decoder. Training targets a bitrate by
//! adjusting the entropy weight between epochs.

pub mod audio;
pub mod codec;
pub mod coder;
pub mod error;
pub mod fixture;
pub mod framing;
pub mod mfcc;
pub mod model;
pub mod nn;
pub mod objective;
pub mod quantizer;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use model::Model;
pub use trainer::{TrainConfig, Trainer};
pub use scalar::Scalar;
