//! Synthetic speech-like corpora for tests and smoke runs.
//!
//! Each file alternates voiced syllables (a gliding harmonic series shaped
//! by two resonances), short noise bursts and pauses, so the signal has the
//! pitch, formant and envelope structure of speech without needing a
//! licensed corpus.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{self, Signal, SAMPLE_RATE};
use crate::error::Result;

/// Gain of a two-pole resonance at `f` Hz with bandwidth `bw` Hz.
fn resonance(f: f64, centre: f64, bw: f64) -> f64 {
    let d = (f - centre) / (0.5 * bw);
    1.0 / (1.0 + d * d)
}

fn voiced(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0_start = rng.gen_range(90.0..240.0);
    let f0_end = f0_start * rng.gen_range(0.75..1.3);
    let f1 = rng.gen_range(300.0..900.0);
    let f2 = rng.gen_range(900.0..2600.0);
    let mut phase = 0.0;
    let mut out = vec![0.0; len];
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / len as f64;
        let f0 = f0_start + (f0_end - f0_start) * t;
        phase += TAU * f0 / sr;
        let mut v = 0.0;
        let mut k = 1.0;
        while k * f0 < 7000.0 {
            let g = resonance(k * f0, f1, 160.0) + 0.6 * resonance(k * f0, f2, 220.0) + 0.02;
            v += g * (k * phase).sin() / k.sqrt();
            k += 1.0;
        }
        *o = v * (std::f64::consts::PI * t).sin().powf(0.6);
    }
    out
}

fn fricative(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    // High-passed white noise with a soft attack and release.
    let mut prev = 0.0;
    (0..len)
        .map(|i| {
            let n: f64 = rng.gen_range(-1.0..1.0);
            let hp = n - prev;
            prev = n;
            let t = i as f64 / len as f64;
            0.3 * hp * (std::f64::consts::PI * t).sin()
        })
        .collect()
}

/// One utterance of roughly `seconds` length.
pub fn utterance(seed: u64, seconds: f64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = (seconds * SAMPLE_RATE as f64) as usize;
    let mut out: Vec<f64> = Vec::with_capacity(target + SAMPLE_RATE as usize);
    while out.len() < target {
        let len = rng.gen_range(1200..4000);
        match rng.gen_range(0..10) {
            0..=5 => out.extend(voiced(&mut rng, len)),
            6 | 7 => out.extend(fricative(&mut rng, len / 2)),
            _ => out.extend(std::iter::repeat(0.0).take(len / 3)),
        }
    }
    out.truncate(target.max(1));
    let mut floor = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let level = rng.gen_range(0.3..0.9);
    Signal::new(
        out.iter()
            .map(|&v| (level * v / peak + 1e-3 * floor.gen_range(-1.0..1.0)) as f32)
            .collect(),
    )
}

/// Writes `count` utterances named `utt_000.wav`, ... into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, count: usize, seconds: f64, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("utt_{i:03}.wav"));
            audio::write_wav(&path, &utterance(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), seconds))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterances_are_bounded_and_repeatable() {
        let a = utterance(7, 1.5);
        assert_eq!(a.len(), 24000);
        assert!(a.peak() <= 0.91 && a.peak() > 0.2);
        assert_eq!(a, utterance(7, 1.5));
        assert_ne!(a, utterance(8, 1.5));
    }

    #[test]
    fn corpus_files_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_corpus(dir.path(), 3, 0.5, 1).unwrap();
        assert_eq!(audio::list_wavs(dir.path()).unwrap(), files);
        assert_eq!(audio::read_wav(&files[0]).unwrap().len(), 8000);
    }
}
