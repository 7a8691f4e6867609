//! PCM WAV input/output, loudness preprocessing and corpus splitting.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Peak amplitude after [`peak_normalize`].
pub const PEAK_TARGET: f32 = 0.999;

/// A mono signal with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f32>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

fn corrupt(path: &Path, reason: impl ToString) -> Error {
    Error::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Reads a 16-bit PCM mono 16 kHz WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
    let path = path.as_ref();
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut reader = hound::WavReader::new(file).map_err(|e| match e {
        hound::Error::Unsupported => {
            Error::UnsupportedFormat(format!("{}: unsupported wav encoding", path.display()))
        }
        other => corrupt(path, other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} Hz, expected {SAMPLE_RATE} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {}-bit {:?}, expected 16-bit PCM",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| corrupt(path, e))?;
    Ok(Signal::new(samples))
}

/// Converts a float sample to PCM16, clamping to the representable range.
pub fn to_pcm16(sample: f32) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes `signal` as 16-bit PCM mono WAV.
pub fn write_wav(path: impl AsRef<Path>, signal: &Signal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(other.to_string())),
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(to_io)?;
    for &s in &signal.samples {
        writer.write_sample(to_pcm16(s)).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

/// Scales the signal so its peak magnitude is [`PEAK_TARGET`].
///
/// Silent signals are returned unchanged, and a signal already at the target
/// peak is a fixed point.
pub fn peak_normalize(signal: &Signal) -> Result<Signal> {
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    let peak = signal.peak();
    if peak == 0.0 || (peak - PEAK_TARGET).abs() <= 1e-6 {
        return Ok(signal.clone());
    }
    let gain = PEAK_TARGET as f64 / peak as f64;
    let samples = signal
        .samples
        .iter()
        .map(|&s| ((s as f64 * gain) as f32).clamp(-PEAK_TARGET, PEAK_TARGET))
        .collect();
    Ok(Signal {
        samples,
        sample_rate: signal.sample_rate,
    })
}

/// Requested number of files per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub const fn new(train: usize, validation: usize, test: usize) -> Self {
        Self {
            train,
            validation,
            test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<PathBuf>,
    pub validation: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    pub seed: u64,
}

/// Lists the `.wav` files directly inside `dir`, sorted by path.
pub fn list_wavs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir.as_ref())? {
        let path = entry?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Randomly partitions the corpus in `dir` into disjoint train/validation/test lists.
pub fn split_corpus(dir: impl AsRef<Path>, counts: SplitCounts, seed: u64) -> Result<CorpusSplit> {
    let mut files = list_wavs(dir)?;
    if files.len() < counts.total() {
        return Err(Error::NotEnoughFiles {
            available: files.len(),
            requested: counts.total(),
        });
    }
    files.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rest = files.into_iter();
    let train = rest.by_ref().take(counts.train).collect();
    let validation = rest.by_ref().take(counts.validation).collect();
    let test = rest.take(counts.test).collect();
    Ok(CorpusSplit {
        train,
        validation,
        test,
        seed,
    })
}
