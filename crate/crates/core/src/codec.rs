//! Encode, decode and evaluate whole signals with a trained [`Model`].

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::audio::{self, Signal, SAMPLE_RATE};
use crate::coder::{self, StreamMeta};
use crate::error::{Error, Result};
use crate::framing::{self, WindowSequence};
use crate::model::Model;
use crate::nn::Tensor;
use crate::objective::{self, Objective};
use crate::quantizer;

/// Windows pushed through the network at once.
const CHUNK: usize = 64;

/// Reported in place of an infinite SNR.
pub const SNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub symbols: Vec<usize>,
    /// Rate predicted from the entropy of the mean soft assignment.
    pub estimated_bps: f64,
    pub duration_secs: f64,
}

impl Encoded {
    pub fn measured_bps(&self) -> f64 {
        measured_bps(self.bytes.len(), self.duration_secs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub signal: Signal,
    pub symbols: Vec<usize>,
}

pub fn measured_bps(num_bytes: usize, duration_secs: f64) -> f64 {
    if duration_secs > 0.0 {
        num_bytes as f64 * 8.0 / duration_secs
    } else {
        0.0
    }
}

fn check_rate(signal: &Signal) -> Result<()> {
    if signal.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!(
            "{} Hz, need {SAMPLE_RATE} Hz",
            signal.sample_rate
        )));
    }
    Ok(())
}

fn windows_of(model: &Model, signal: &Signal) -> Result<WindowSequence> {
    check_rate(signal)?;
    let normalized = audio::peak_normalize(signal)?;
    Ok(framing::extract_windows(&normalized.samples, &model.frame))
}

/// Encoder outputs for every window, in window order.
fn codes(model: &Model, windows: &[Vec<f32>]) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(windows.len() * model.frame.window_len / 2);
    for chunk in windows.chunks(CHUNK) {
        out.extend_from_slice(model.network.encode(&Tensor::from_rows(chunk)?)?.data());
    }
    Ok(out)
}

/// Hard symbols plus the entropy of the mean soft assignment over `codes`.
fn quantize(model: &Model, codes: &[f32]) -> (Vec<usize>, f64) {
    let q = &model.quantizer;
    let n = q.num_bins();
    let mut hist = vec![0.0f64; n];
    let mut soft = vec![0.0f32; n];
    let symbols = codes
        .iter()
        .map(|&z| {
            q.soft_quantize_into(z, &mut soft);
            for (h, &s) in hist.iter_mut().zip(&soft) {
                *h += s as f64;
            }
            quantizer::harden(&soft)
        })
        .collect();
    let count = codes.len().max(1) as f64;
    hist.iter_mut().for_each(|h| *h /= count);
    (symbols, objective::entropy_bits(&hist))
}

fn reconstruct(model: &Model, symbols: &[usize], num_windows: usize, original_len: usize) -> Result<Vec<f32>> {
    let per_window = model.frame.window_len / 2;
    let values: Vec<f32> = symbols.iter().map(|&s| model.quantizer.bins[s]).collect();
    let mut windows = Vec::with_capacity(num_windows);
    for chunk in values.chunks(per_window * CHUNK) {
        let b = chunk.len() / per_window;
        let y = model.network.decode(&Tensor::from_vec(b, 1, per_window, chunk.to_vec())?)?;
        windows.extend(y.data().chunks_exact(model.frame.window_len).map(<[f32]>::to_vec));
    }
    framing::overlap_add(&WindowSequence { windows, original_len }, &model.frame)
}

/// Peak-normalize, window, encode, harden and pack into an `NSC1` stream.
pub fn encode(model: &Model, signal: &Signal) -> Result<Encoded> {
    let seq = windows_of(model, signal)?;
    let codes = codes(model, &seq.windows)?;
    let (symbols, bits) = quantize(model, &codes);
    let meta = StreamMeta {
        sample_rate: signal.sample_rate,
        window_len: model.frame.window_len as u16,
        overlap: model.frame.overlap as u16,
        num_windows: seq.windows.len() as u32,
        original_len: signal.len() as u64,
    };
    let bytes = coder::pack_bitstream(&symbols, &meta, &model.table)?;
    log::debug!("encoded {} windows into {} bytes", seq.windows.len(), bytes.len());
    Ok(Encoded {
        bytes,
        symbols,
        estimated_bps: objective::bitrate_estimate(bits),
        duration_secs: signal.duration_secs(),
    })
}

/// Unpack an `NSC1` stream and run the decoder.
pub fn decode(model: &Model, bytes: &[u8]) -> Result<Decoded> {
    let (symbols, meta, table) = coder::unpack_bitstream(bytes, model.quantizer.num_bins())?;
    if table != model.table {
        return Err(Error::ModelMismatch("stream frequency table differs from the model's".into()));
    }
    if meta.window_len as usize != model.frame.window_len || meta.overlap as usize != model.frame.overlap {
        return Err(Error::ModelMismatch(format!(
            "stream framing {}/{} differs from model framing {}/{}",
            meta.window_len, meta.overlap, model.frame.window_len, model.frame.overlap
        )));
    }
    if meta.sample_rate != SAMPLE_RATE {
        return Err(Error::ModelMismatch(format!("stream sample rate {} Hz", meta.sample_rate)));
    }
    let original_len = meta.original_len as usize;
    if model.frame.num_windows(original_len) != meta.num_windows as usize {
        return Err(Error::CorruptPayload(format!(
            "{} windows cannot cover {original_len} samples",
            meta.num_windows
        )));
    }
    let samples = reconstruct(model, &symbols, meta.num_windows as usize, original_len)?;
    Ok(Decoded {
        signal: Signal::new(samples),
        symbols,
    })
}

/// Signal-to-noise ratio in dB, capped at [`SNR_CAP_DB`].
pub fn snr_db(reference: &[f32], test: &[f32]) -> f64 {
    let signal: f64 = reference.iter().map(|&x| (x as f64).powi(2)).sum();
    let noise: f64 = reference
        .iter()
        .zip(test)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    if noise == 0.0 {
        return SNR_CAP_DB;
    }
    (10.0 * (signal / noise).log10()).min(SNR_CAP_DB)
}

/// Mean perceptual distance over aligned windows of two equal-length signals.
pub fn perceptual_distance(model: &Model, x: &[f32], y: &[f32]) -> f64 {
    let objective = Objective::<f64>::new(model.frame.window_len);
    let wx = framing::extract_windows(x, &model.frame).windows;
    let wy = framing::extract_windows(y, &model.frame).windows;
    let total: f64 = wx
        .iter()
        .zip(&wy)
        .map(|(a, b)| {
            let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
            let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
            objective.perceptual_loss(&a, &b)
        })
        .sum();
    total / wx.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileReport {
    pub path: PathBuf,
    pub snr_db: f64,
    pub perceptual: f64,
    pub measured_bps: f64,
    pub estimated_bps: f64,
}

/// Full encode/decode of one signal. With `bypass` the reconstruction is
/// the normalized input itself; rates still come from a real encode.
pub fn evaluate_signal(model: &Model, signal: &Signal, bypass: bool) -> Result<FileReport> {
    let enc = encode(model, signal)?;
    let reference = audio::peak_normalize(signal)?.samples;
    let output = if bypass {
        reference.clone()
    } else {
        let dec = decode(model, &enc.bytes)?;
        if dec.symbols != enc.symbols {
            return Err(Error::CorruptPayload("decoded symbols differ from encoded symbols".into()));
        }
        dec.signal.samples
    };
    Ok(FileReport {
        path: PathBuf::new(),
        snr_db: snr_db(&reference, &output),
        perceptual: perceptual_distance(model, &reference, &output),
        measured_bps: enc.measured_bps(),
        estimated_bps: enc.estimated_bps,
    })
}

#[derive(Debug, Default)]
pub struct EvalReport {
    pub files: Vec<FileReport>,
    pub failures: Vec<(PathBuf, Error)>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "file,snr_db,perceptual,measured_bps,estimated_bps";

    /// Per-column means over successful files.
    pub fn mean(&self) -> Option<FileReport> {
        if self.files.is_empty() {
            return None;
        }
        let n = self.files.len() as f64;
        let avg = |f: fn(&FileReport) -> f64| self.files.iter().map(f).sum::<f64>() / n;
        Some(FileReport {
            path: PathBuf::from("mean"),
            snr_db: avg(|r| r.snr_db),
            perceptual: avg(|r| r.perceptual),
            measured_bps: avg(|r| r.measured_bps),
            estimated_bps: avg(|r| r.estimated_bps),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in self.files.iter().chain(self.mean().as_ref()) {
            s.push_str(&format!(
                "{},{:.3},{:.6},{:.1},{:.1}\n",
                r.path.display(),
                r.snr_db,
                r.perceptual,
                r.measured_bps,
                r.estimated_bps
            ));
        }
        s
    }
}

/// Evaluates every file; failures are collected and the run continues.
pub fn evaluate_files(model: &Model, files: &[PathBuf], bypass: bool) -> EvalReport {
    let results: Vec<_> = files
        .par_iter()
        .map(|p| {
            let r = audio::read_wav(p).and_then(|s| evaluate_signal(model, &s, bypass));
            (p.clone(), r)
        })
        .collect();
    let mut report = EvalReport::default();
    for (path, r) in results {
        match r {
            Ok(mut f) => {
                f.path = path;
                report.files.push(f);
            }
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                report.failures.push((path, e));
            }
        }
    }
    report
}

pub fn evaluate_dir(model: &Model, dir: impl AsRef<Path>, bypass: bool) -> Result<EvalReport> {
    let files = audio::list_wavs(dir)?;
    Ok(evaluate_files(model, &files, bypass))
}

/// Mean and 95th percentile of a set of durations, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl Timing {
    pub fn from_samples(ms: &mut [f64]) -> Self {
        if ms.is_empty() {
            return Self { mean_ms: 0.0, p95_ms: 0.0 };
        }
        ms.sort_by(f64::total_cmp);
        let idx = ((ms.len() as f64 * 0.95).ceil() as usize).clamp(1, ms.len()) - 1;
        Self {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p95_ms: ms[idx],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub iterations: usize,
    pub encode: Timing,
    pub decode: Timing,
    pub combined: Timing,
}

/// Per-window work on the encode side: network, hardening and range coding.
pub fn encode_window(model: &Model, window: &[f32]) -> Result<Vec<u8>> {
    let codes = model.network.encode(&Tensor::from_vec(1, 1, window.len(), window.to_vec())?)?;
    let (symbols, _) = quantize(model, codes.data());
    coder::range_encode(&symbols, &model.table)
}

/// Per-window work on the decode side: range decoding, bin lookup and network.
pub fn decode_window(model: &Model, bytes: &[u8]) -> Result<Vec<f32>> {
    let per_window = model.frame.window_len / 2;
    let symbols = coder::range_decode(bytes, per_window, &model.table)?;
    let values = symbols.iter().map(|&s| model.quantizer.bins[s]).collect();
    Ok(model.network.decode(&Tensor::from_vec(1, 1, per_window, values)?)?.into_data())
}

/// Times single-window encode and decode on one thread after `warmup` untimed rounds.
pub fn bench_windows(model: &Model, window: &[f32], warmup: usize, iterations: usize) -> Result<BenchReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| {
        for _ in 0..warmup {
            decode_window(model, &encode_window(model, window)?)?;
        }
        let (mut enc, mut dec, mut both) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..iterations {
            let t0 = Instant::now();
            let bytes = encode_window(model, window)?;
            let t1 = Instant::now();
            std::hint::black_box(decode_window(model, &bytes)?);
            let t2 = Instant::now();
            enc.push((t1 - t0).as_secs_f64() * 1e3);
            dec.push((t2 - t1).as_secs_f64() * 1e3);
            both.push((t2 - t0).as_secs_f64() * 1e3);
        }
        Ok(BenchReport {
            iterations,
            encode: Timing::from_samples(&mut enc),
            decode: Timing::from_samples(&mut dec),
            combined: Timing::from_samples(&mut both),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coder::FrequencyTable;
    use crate::framing::FrameConfig;
    use crate::nn::Network;
    use crate::quantizer::Quantizer;
    use crate::trainer::TrainConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        let cfg = TrainConfig {
            channels: 4,
            residual_blocks: 1,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        Model {
            network: Network::new(&cfg.network_spec(), &mut rng),
            quantizer: Quantizer::uniform(32, -1.0, 1.0, 300.0),
            table: FrequencyTable::from_counts(vec![100; 32]).unwrap(),
            frame: FrameConfig::default(),
            config: cfg,
        }
    }

    fn signal(len: usize, seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect())
    }

    #[test]
    fn decode_preserves_length_and_symbols() {
        let m = model();
        for len in [1, 511, 512, 4000] {
            let s = signal(len, len as u64);
            let enc = encode(&m, &s).unwrap();
            let dec = decode(&m, &enc.bytes).unwrap();
            assert_eq!(dec.signal.len(), len);
            assert_eq!(dec.symbols, enc.symbols);
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let m = model();
        let s = signal(3000, 1);
        assert_eq!(encode(&m, &s).unwrap().bytes, encode(&m, &s).unwrap().bytes);
    }

    #[test]
    fn other_table_is_a_mismatch() {
        let m = model();
        let enc = encode(&m, &signal(2000, 2)).unwrap();
        let mut other = m.clone();
        other.table = FrequencyTable::from_counts((1..=32).collect()).unwrap();
        assert!(matches!(decode(&other, &enc.bytes), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn bypass_is_perfect() {
        let m = model();
        let r = evaluate_signal(&m, &signal(5000, 3), true).unwrap();
        assert_eq!(r.snr_db, SNR_CAP_DB);
        assert_eq!(r.perceptual, 0.0);
        assert!(r.measured_bps > 0.0);
    }

    #[test]
    fn snr_of_known_noise() {
        let x = vec![1.0f32; 100];
        let y = vec![1.1f32; 100];
        assert!((snr_db(&x, &y) - 20.0).abs() < 1e-4);
        assert_eq!(snr_db(&x, &x), SNR_CAP_DB);
    }

    #[test]
    fn window_round_trip_matches_batch_path() {
        let m = model();
        let w: Vec<f32> = signal(512, 9).samples;
        let bytes = encode_window(&m, &w).unwrap();
        let y = decode_window(&m, &bytes).unwrap();
        assert_eq!(y.len(), 512);
    }

    #[test]
    fn percentile_picks_upper_tail() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = Timing::from_samples(&mut v);
        assert_eq!(t.p95_ms, 95.0);
        assert!((t.mean_ms - 50.5).abs() < 1e-12);
    }
}
