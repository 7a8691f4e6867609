//! Fixed-size analysis windows with a short Hann crossfade at synthesis.

use crate::error::{Error, Result};

/// 32 ms at 16 kHz.
pub const WINDOW_LEN: usize = 512;
/// 2 ms at 16 kHz.
pub const OVERLAP: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameConfig {
    pub window_len: usize,
    pub overlap: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            window_len: WINDOW_LEN,
            overlap: OVERLAP,
        }
    }
}

impl FrameConfig {
    pub fn new(window_len: usize, overlap: usize) -> Result<Self> {
        if overlap == 0 || overlap >= window_len {
            return Err(Error::InvalidConfig(format!(
                "overlap {overlap} must lie in (0, {window_len})"
            )));
        }
        Ok(Self {
            window_len,
            overlap,
        })
    }

    /// Unique samples contributed by each window.
    pub fn hop(&self) -> usize {
        self.window_len - self.overlap
    }

    pub fn num_windows(&self, len: usize) -> usize {
        len.saturating_sub(self.overlap).max(1).div_ceil(self.hop())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSequence {
    pub windows: Vec<Vec<f32>>,
    pub original_len: usize,
}

/// Complementary half-sample-offset Hann ramps over `overlap` samples.
pub fn crossfade_weights(overlap: usize) -> (Vec<f64>, Vec<f64>) {
    let fade_in: Vec<f64> = (0..overlap)
        .map(|n| {
            0.5 * (1.0 - (std::f64::consts::PI * (n as f64 + 0.5) / overlap as f64).cos())
        })
        .collect();
    let fade_out = fade_in.iter().map(|w| 1.0 - w).collect();
    (fade_in, fade_out)
}

/// Slices `samples` into windows starting every `hop` samples; the last one is zero padded.
pub fn extract_windows(samples: &[f32], cfg: &FrameConfig) -> WindowSequence {
    let count = cfg.num_windows(samples.len());
    let windows = (0..count)
        .map(|i| {
            let start = i * cfg.hop();
            let mut w = vec![0.0f32; cfg.window_len];
            if start < samples.len() {
                let end = (start + cfg.window_len).min(samples.len());
                w[..end - start].copy_from_slice(&samples[start..end]);
            }
            w
        })
        .collect();
    WindowSequence {
        windows,
        original_len: samples.len(),
    }
}

/// Reassembles windows by crossfading each overlap region, truncating to `original_len`.
pub fn overlap_add(seq: &WindowSequence, cfg: &FrameConfig) -> Result<Vec<f32>> {
    if seq.windows.is_empty() {
        return Err(Error::LengthMismatch {
            expected: 1,
            actual: 0,
        });
    }
    if let Some(bad) = seq.windows.iter().find(|w| w.len() != cfg.window_len) {
        return Err(Error::LengthMismatch {
            expected: cfg.window_len,
            actual: bad.len(),
        });
    }
    let (fade_in, fade_out) = crossfade_weights(cfg.overlap);
    let hop = cfg.hop();
    let full = hop * (seq.windows.len() - 1) + cfg.window_len;
    let mut out = vec![0.0f64; full];
    for (i, w) in seq.windows.iter().enumerate() {
        let start = i * hop;
        for (n, &v) in w.iter().enumerate() {
            let mut g = 1.0;
            if i > 0 && n < cfg.overlap {
                g = fade_in[n];
            }
            if i + 1 < seq.windows.len() && n >= hop {
                g = fade_out[n - hop];
            }
            out[start + n] += g * v as f64;
        }
    }
    out.truncate(seq.original_len);
    Ok(out.into_iter().map(|v| v as f32).collect())
}
