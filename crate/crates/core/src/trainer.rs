//! Two-stage training with bitrate control.
//!
//! Stage one trains encoder and decoder with quantization bypassed and only
//! the MSE and perceptual terms. The bins are then initialized by k-means
//! over the encoder's outputs and stage two trains the full objective. After
//! every stage-two epoch the validation bitrate estimate nudges the entropy
//! weight toward the target band, and the best on-target model is kept.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{self, CorpusSplit, SplitCounts};
use crate::coder::FrequencyTable;
use crate::error::{Error, Result};
use crate::framing::{self, FrameConfig};
use crate::model::Model;
use crate::nn::{Adam, Network, NetworkSpec, Tensor};
use crate::objective::{self, LossReport, LossWeights, Objective};
use crate::quantizer::{self, Quantizer};

/// Largest sample set handed to k-means when initializing the bins.
pub const KMEANS_SAMPLE_CAP: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub tau_initial: f64,
    pub tau_change: f64,
    pub target_bps: f64,
    pub target_halfwidth: f64,
    pub weights: LossWeights,
    pub channels: usize,
    pub residual_blocks: usize,
    pub num_bins: usize,
    pub sigma_initial: f64,
    /// Largest global gradient norm per step; 0 disables clipping.
    pub grad_clip: f64,
    pub split: SplitCounts,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 5,
            stage2_epochs: 145,
            batch_size: 128,
            lr_initial: 0.025,
            lr_final: 0.01,
            tau_initial: 0.5,
            tau_change: 0.025,
            target_bps: 9000.0,
            target_halfwidth: 450.0,
            weights: LossWeights::default(),
            channels: 32,
            residual_blocks: 2,
            num_bins: quantizer::DEFAULT_BINS,
            sigma_initial: quantizer::INITIAL_SIGMA,
            grad_clip: 0.0,
            split: SplitCounts::new(3000, 200, 500),
            seed: 42,
        }
    }
}

impl TrainConfig {
    /// Small preset that trains on a 64-file corpus in minutes on a CPU.
    ///
    /// The small network diverges at the full-scale learning rates, so they
    /// start at a fifth and decay further, and gradients are clipped. The
    /// entropy weight step is scaled so 20 stage-two epochs cover the same
    /// range of weights as the full schedule's 145.
    pub fn desk_scale() -> Self {
        let full = Self::default();
        Self {
            stage1_epochs: 10,
            stage2_epochs: 20,
            lr_initial: 0.005,
            lr_final: 0.0005,
            grad_clip: 20.0,
            tau_change: full.tau_change * full.stage2_epochs as f64 / 20.0,
            channels: 16,
            residual_blocks: 1,
            split: SplitCounts::new(48, 8, 8),
            ..full
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.stage1_epochs + self.stage2_epochs
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.channels == 0 || self.num_bins < 2 {
            return bad("batch size and channels must be positive, bins at least 2");
        }
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_initial) {
            return bad("learning rates must satisfy 0 < final <= initial");
        }
        if !(self.target_bps > 0.0 && self.target_halfwidth > 0.0) {
            return bad("target bitrate and its half width must be positive");
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return bad("gradient clip must be finite and non-negative");
        }
        if !(self.tau_initial >= 0.0 && self.tau_change > 0.0 && self.sigma_initial > 0.0) {
            return bad("entropy weight schedule and temperature must be positive");
        }
        Ok(())
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::standard(self.channels, self.residual_blocks)
    }
}

/// Single descending cosine arc from `lr_initial` at epoch 0 to `lr_final` at the last epoch count.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let t = cfg.total_epochs().max(1) as f64;
    let progress = (epoch as f64 / t).min(1.0);
    cfg.lr_final + 0.5 * (cfg.lr_initial - cfg.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Moves the entropy weight by one step toward the target band, never below zero.
pub fn entropy_controller(estimated_bps: f64, lambda: f64, cfg: &TrainConfig) -> f64 {
    if estimated_bps > cfg.target_bps + cfg.target_halfwidth {
        lambda + cfg.tau_change
    } else if estimated_bps < cfg.target_bps - cfg.target_halfwidth {
        (lambda - cfg.tau_change).max(0.0)
    } else {
        lambda
    }
}

/// Scales all slices together so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_global_norm(slices: Vec<&mut [f32]>, max_norm: f64) -> f64 {
    let norm = slices
        .iter()
        .map(|g| g.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = (max_norm / norm) as f32;
        for g in slices {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

pub fn in_target_band(estimated_bps: f64, cfg: &TrainConfig) -> bool {
    (estimated_bps - cfg.target_bps).abs() <= cfg.target_halfwidth
}

/// Peak-normalized windows of a list of files.
#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub windows: Vec<Vec<f32>>,
}

impl WindowSet {
    pub fn from_signals<'a>(signals: impl IntoIterator<Item = &'a audio::Signal>, frame: &FrameConfig) -> Result<Self> {
        let mut windows = Vec::new();
        for s in signals {
            let s = audio::peak_normalize(s)?;
            windows.extend(framing::extract_windows(&s.samples, frame).windows);
        }
        Ok(Self { windows })
    }

    pub fn from_files(files: &[PathBuf], frame: &FrameConfig) -> Result<Self> {
        let signals = files.iter().map(audio::read_wav).collect::<Result<Vec<_>>>()?;
        Self::from_signals(&signals, frame)
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let rows: Vec<Vec<f32>> = indices.iter().map(|&i| self.windows[i].clone()).collect();
        Tensor::from_rows(&rows).expect("windows share one length")
    }

    fn chunks(&self, size: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.len()).step_by(size.max(1)).map(move |s| (s..(s + size).min(self.len())).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    QuantizationOff,
    QuantizationOn,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::QuantizationOff => 1,
            Stage::QuantizationOn => 2,
        }
    }
}

/// Validation metrics for one model state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub mse: f64,
    pub perceptual: f64,
    /// `-(w_mse * mse + w_perceptual * perceptual)`; higher is better.
    pub score: f64,
    pub entropy_bits: f64,
    pub estimated_bps: f64,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub train: LossReport,
    pub lambda_entropy: f64,
    pub lr: f64,
    pub validation: Validation,
    pub checkpointed: bool,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,stage,mse,perceptual,quantization_penalty,entropy_bits,total,lambda_entropy,lr,estimated_bps,val_mse,val_perceptual,val_score,checkpointed";

    /// Stage-one rows leave the quantization and entropy columns empty.
    pub fn csv_row(&self) -> String {
        let on = self.stage == Stage::QuantizationOn;
        let opt = |v: f64| if on { format!("{v:.6}") } else { String::new() };
        format!(
            "{},{},{:.6},{:.6},{},{},{:.6},{},{:.6},{},{:.6},{:.6},{:.6},{}",
            self.epoch,
            self.stage.number(),
            self.train.mse,
            self.train.perceptual,
            opt(self.train.quantization_penalty),
            opt(self.train.entropy_bits),
            self.train.total,
            opt(self.lambda_entropy),
            self.lr,
            if on { format!("{:.1}", self.validation.estimated_bps) } else { String::new() },
            self.validation.mse,
            self.validation.perceptual,
            self.validation.score,
            u8::from(self.checkpointed),
        )
    }
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(EpochLog::CSV_HEADER);
    s.push('\n');
    for row in log {
        s.push_str(&row.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub lambda_entropy: f64,
    pub lr: f64,
    pub best_score: Option<f64>,
    pub quantization_on: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best on-target model, if any epoch landed inside the target band.
    pub best: Option<Model>,
    /// Model after the final epoch.
    pub last: Model,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn model(&self) -> &Model {
        self.best.as_ref().unwrap_or(&self.last)
    }
}

/// Owns the model, optimizer state and data for one training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub frame: FrameConfig,
    pub network: Network<f32>,
    pub quantizer: Quantizer<f32>,
    pub state: TrainState,
    objective: Objective<f32>,
    net_adam: Adam<f32>,
    quant_adam: Option<Adam<f32>>,
    rng: ChaCha8Rng,
    train: WindowSet,
    validation: WindowSet,
    pub log: Vec<EpochLog>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, train: WindowSet, validation: WindowSet) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() || validation.is_empty() {
            return Err(Error::InvalidConfig("training and validation sets must be non-empty".into()));
        }
        let frame = FrameConfig::default();
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let network = Network::new(&cfg.network_spec(), &mut init_rng);
        let net_adam = Adam::new(&network.params());
        let quantizer = Quantizer::uniform(cfg.num_bins, -1.0, 1.0, cfg.sigma_initial);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        Ok(Self {
            state: TrainState {
                epoch: 0,
                lambda_entropy: cfg.tau_initial,
                lr: cosine_lr(0, &cfg),
                best_score: None,
                quantization_on: false,
            },
            objective: Objective::new(frame.window_len),
            frame,
            network,
            quantizer,
            net_adam,
            quant_adam: None,
            rng,
            train,
            validation,
            log: Vec::new(),
            cfg,
        })
    }

    /// Loads and splits a corpus directory, then builds a trainer.
    pub fn from_corpus(dir: impl AsRef<std::path::Path>, cfg: TrainConfig) -> Result<(Self, CorpusSplit)> {
        let split = audio::split_corpus(dir, cfg.split, cfg.seed)?;
        let frame = FrameConfig::default();
        let train = WindowSet::from_files(&split.train, &frame)?;
        let validation = WindowSet::from_files(&split.validation, &frame)?;
        Ok((Self::new(cfg, train, validation)?, split))
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            entropy: self.state.lambda_entropy,
            ..self.cfg.weights
        }
    }

    /// One optimizer step on a minibatch; returns the batch loss report.
    fn step(&mut self, x: &Tensor<f32>) -> Result<LossReport> {
        let weights = self.weights();
        let (codes, enc_caches) = self.network.encode_cached(x)?;
        let assignments = self
            .state
            .quantization_on
            .then(|| self.quantizer.soft_quantize_all(codes.data()));
        let decoder_in = match &assignments {
            Some(s) => {
                let [b, c, l] = codes.shape();
                Tensor::from_vec(b, c, l, self.quantizer.dequantize_all(s))?
            }
            None => codes.clone(),
        };
        let (y, dec_caches) = self.network.decode_cached(&decoder_in)?;
        let lg = self.objective.evaluate(
            x.data(),
            y.data(),
            assignments.as_deref(),
            self.quantizer.num_bins(),
            &weights,
        )?;
        if !lg.report.is_finite() {
            return Ok(lg.report);
        }

        let mut grads = self.network.zeros_like();
        let [b, c, l] = y.shape();
        let g_y = Tensor::from_vec(b, c, l, lg.recon)?;
        let g_dec_in = self.network.decoder_backward(&dec_caches, &g_y, &mut grads)?;
        let mut qg = assignments
            .as_ref()
            .map(|s| self.quantizer.backward(codes.data(), s, &lg.assignments, g_dec_in.data()));
        let g_codes = match &mut qg {
            Some(q) => {
                let [b, c, l] = codes.shape();
                Tensor::from_vec(b, c, l, std::mem::take(&mut q.codes))?
            }
            None => g_dec_in,
        };
        self.network.encoder_backward(&enc_caches, &g_codes, &mut grads)?;
        if self.cfg.grad_clip > 0.0 {
            let mut slices = grads.params_mut();
            if let Some(q) = &mut qg {
                slices.push(&mut q.bins);
                slices.push(std::slice::from_mut(&mut q.log_sigma));
            }
            clip_global_norm(slices, self.cfg.grad_clip);
        }
        if let Some(q) = &qg {
            let adam = self.quant_adam.as_mut().expect("quantizer optimizer exists in stage two");
            let mut log_sigma = [self.quantizer.log_sigma];
            adam.update(
                vec![&mut self.quantizer.bins, &mut log_sigma],
                &[&q.bins, &[q.log_sigma]],
                self.state.lr,
            );
            self.quantizer.log_sigma = log_sigma[0];
        }
        self.net_adam.update(self.network.params_mut(), &grads.params(), self.state.lr);
        Ok(lg.report)
    }

    fn train_epoch(&mut self) -> Result<LossReport> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = LossReport::default();
        let mut batches = 0usize;
        for (bi, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let x = self.train.batch(idx);
            let r = self.step(&x)?;
            if !r.is_finite() {
                log::error!("non-finite loss at epoch {} minibatch {bi}: {r:?}", self.state.epoch);
                return Err(Error::NanLoss {
                    epoch: self.state.epoch,
                    batch: bi,
                });
            }
            sum.mse += r.mse;
            sum.perceptual += r.perceptual;
            sum.quantization_penalty += r.quantization_penalty;
            sum.entropy_bits += r.entropy_bits;
            sum.total += r.total;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        Ok(LossReport {
            mse: sum.mse / n,
            perceptual: sum.perceptual / n,
            quantization_penalty: sum.quantization_penalty / n,
            entropy_bits: sum.entropy_bits / n,
            total: sum.total / n,
        })
    }

    /// Encoder outputs for every training window.
    pub fn training_codes(&self) -> Result<Vec<f32>> {
        let mut out = Vec::new();
        for idx in self.train.chunks(self.cfg.batch_size) {
            out.extend_from_slice(self.network.encode(&self.train.batch(&idx))?.data());
        }
        Ok(out)
    }

    /// Validation on the deployment path: hard symbols once quantization is on.
    pub fn validate(&self) -> Result<Validation> {
        validate_model(&self.network, self.state.quantization_on.then_some(&self.quantizer), &self.validation, &self.objective, &self.cfg)
    }

    pub fn run_stage1(&mut self) -> Result<()> {
        while self.state.epoch < self.cfg.stage1_epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// k-means bin initialization, entropy weight reset and quantization switch-on.
    pub fn transition_to_stage2(&mut self) -> Result<()> {
        let mut codes = self.training_codes()?;
        if codes.len() > KMEANS_SAMPLE_CAP {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(2));
            codes.shuffle(&mut rng);
            codes.truncate(KMEANS_SAMPLE_CAP);
        }
        let bins = quantizer::kmeans_init(&codes, self.cfg.num_bins, self.cfg.seed)?;
        self.quantizer = Quantizer::new(bins, self.cfg.sigma_initial);
        self.quant_adam = Some(Adam::new(&[&self.quantizer.bins, &[self.quantizer.log_sigma]]));
        self.state.lambda_entropy = self.cfg.tau_initial;
        self.state.quantization_on = true;
        log::info!(
            "quantization on: bins [{:.4}, {:.4}], lambda_entropy {}",
            self.quantizer.bins[0],
            self.quantizer.bins[self.cfg.num_bins - 1],
            self.state.lambda_entropy
        );
        Ok(())
    }

    /// Trains one epoch in the current stage, validates and, in stage two,
    /// updates the entropy weight. Returns the model when it was checkpointed.
    pub fn run_epoch(&mut self) -> Result<Option<Model>> {
        let epoch = self.state.epoch;
        if epoch == self.cfg.stage1_epochs && !self.state.quantization_on {
            self.transition_to_stage2()?;
        }
        self.state.lr = cosine_lr(epoch, &self.cfg);
        let lambda = self.state.lambda_entropy;
        let train = self.train_epoch()?;
        let validation = self.validate()?;
        let stage = if self.state.quantization_on { Stage::QuantizationOn } else { Stage::QuantizationOff };
        let mut saved = None;
        if stage == Stage::QuantizationOn {
            let improves = self.state.best_score.is_none_or(|b| validation.score > b);
            if improves && in_target_band(validation.estimated_bps, &self.cfg) {
                self.state.best_score = Some(validation.score);
                saved = Some(self.snapshot()?);
            }
            self.state.lambda_entropy = entropy_controller(validation.estimated_bps, lambda, &self.cfg);
        }
        let row = EpochLog {
            epoch,
            stage,
            train,
            lambda_entropy: lambda,
            lr: self.state.lr,
            validation,
            checkpointed: saved.is_some(),
        };
        log::info!(
            "epoch {epoch} stage {} loss {:.5} mse {:.6} val_mse {:.6} est {:.0} bps lambda {:.3}",
            stage.number(),
            train.total,
            train.mse,
            validation.mse,
            validation.estimated_bps,
            lambda
        );
        self.log.push(row);
        self.state.epoch += 1;
        Ok(saved)
    }

    /// Current weights packaged with a frequency table measured on the training set.
    pub fn snapshot(&self) -> Result<Model> {
        let table = if self.state.quantization_on {
            let codes = self.training_codes()?;
            let symbols: Vec<usize> = codes.iter().map(|&z| self.quantizer.nearest_bin(z)).collect();
            FrequencyTable::from_symbols(&symbols, self.quantizer.num_bins())?
        } else {
            FrequencyTable::from_counts(vec![1; self.quantizer.num_bins()])?
        };
        Ok(Model {
            network: self.network.clone(),
            quantizer: self.quantizer.clone(),
            table,
            frame: self.frame,
            config: self.cfg.clone(),
        })
    }

    pub fn run_stage2(&mut self) -> Result<Option<Model>> {
        let mut best = None;
        while self.state.epoch < self.cfg.total_epochs() {
            if let Some(m) = self.run_epoch()? {
                best = Some(m);
            }
        }
        Ok(best)
    }

    /// Both stages end to end.
    pub fn run(mut self) -> Result<TrainOutcome> {
        self.run_stage1()?;
        if !self.state.quantization_on {
            self.transition_to_stage2()?;
        }
        let best = self.run_stage2()?;
        let last = self.snapshot()?;
        Ok(TrainOutcome {
            best,
            last,
            log: self.log,
        })
    }
}

/// Validation metrics for a network, quantized through `quantizer` when given.
pub fn validate_model(
    network: &Network<f32>,
    quantizer: Option<&Quantizer<f32>>,
    data: &WindowSet,
    objective: &Objective<f32>,
    cfg: &TrainConfig,
) -> Result<Validation> {
    let (mut se, mut perc, mut windows) = (0.0f64, 0.0f64, 0usize);
    let mut hist = vec![0.0f64; quantizer.map_or(0, |q| q.num_bins())];
    let mut symbols = 0usize;
    for idx in data.chunks(cfg.batch_size) {
        let x = data.batch(&idx);
        let codes = network.encode(&x)?;
        let decoder_in = match quantizer {
            Some(q) => {
                let soft = q.soft_quantize_all(codes.data());
                for s in soft.chunks_exact(q.num_bins()) {
                    for (h, &v) in hist.iter_mut().zip(s) {
                        *h += v as f64;
                    }
                }
                symbols += codes.data().len();
                let values: Vec<f32> = soft
                    .chunks_exact(q.num_bins())
                    .map(|s| q.bins[quantizer::harden(s)])
                    .collect();
                let [b, c, l] = codes.shape();
                Tensor::from_vec(b, c, l, values)?
            }
            None => codes,
        };
        let y = network.decode(&decoder_in)?;
        se += objective::mse_loss(x.data(), y.data())? as f64 * x.data().len() as f64;
        perc += objective.perceptual_loss(x.data(), y.data()) as f64 * idx.len() as f64;
        windows += idx.len();
    }
    let n = windows.max(1) as f64;
    let mse = se / (n * data.windows.first().map_or(1, Vec::len) as f64);
    let perceptual = perc / n;
    let entropy_bits = if symbols > 0 {
        hist.iter_mut().for_each(|h| *h /= symbols as f64);
        objective::entropy_bits(&hist)
    } else {
        0.0
    };
    Ok(Validation {
        mse,
        perceptual,
        score: -(cfg.weights.mse * mse + cfg.weights.perceptual * perceptual),
        entropy_bits,
        estimated_bps: objective::bitrate_estimate(entropy_bits),
    })
}

/// Deterministic per-run random source for callers that need one (fixtures, subsampling).
pub fn seeded_rng(seed: u64) -> impl Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert!((cosine_lr(0, &cfg) - 0.025).abs() < 1e-15);
        assert!((cosine_lr(150, &cfg) - 0.01).abs() < 1e-15);
        assert!((cosine_lr(75, &cfg) - 0.0175).abs() < 1e-12);
        for e in 0..150 {
            assert!(cosine_lr(e + 1, &cfg) <= cosine_lr(e, &cfg));
        }
    }

    #[test]
    fn controller_rule() {
        let cfg = TrainConfig {
            target_bps: 9000.0,
            ..TrainConfig::default()
        };
        assert!((entropy_controller(10_000.0, 0.5, &cfg) - 0.525).abs() < 1e-12);
        assert_eq!(entropy_controller(8_900.0, 0.5, &cfg), 0.5);
        assert_eq!(entropy_controller(9_450.0, 0.5, &cfg), 0.5);
        assert_eq!(entropy_controller(5_000.0, 0.01, &cfg), 0.0);
        assert!((entropy_controller(5_000.0, 0.5, &cfg) - 0.475).abs() < 1e-12);
    }

    #[test]
    fn controller_converges_on_simulated_plant() {
        let cfg = TrainConfig::default();
        let plant = |lambda: f64| 9000.0 + 4000.0 * (0.6 - lambda);
        let mut lambda = cfg.tau_initial;
        let mut entered = None;
        for step in 0..100 {
            if in_target_band(plant(lambda), &cfg) && entered.is_none() {
                entered = Some(step);
            }
            lambda = entropy_controller(plant(lambda), lambda, &cfg);
        }
        assert!(entered.unwrap() <= 60);
        assert!(in_target_band(plant(lambda), &cfg));
    }

    #[test]
    fn csv_rows() {
        let row = EpochLog {
            epoch: 0,
            stage: Stage::QuantizationOff,
            train: LossReport { mse: 0.1, perceptual: 0.2, quantization_penalty: 0.0, entropy_bits: 0.0, total: 4.0 },
            lambda_entropy: 0.5,
            lr: 0.025,
            validation: Validation { mse: 0.1, perceptual: 0.2, score: -4.0, entropy_bits: 0.0, estimated_bps: 0.0 },
            checkpointed: false,
        };
        let line = row.csv_row();
        assert_eq!(line.split(',').count(), EpochLog::CSV_HEADER.split(',').count());
        assert!(line.starts_with("0,1,0.100000,0.200000,,,4.000000,,0.025000,,"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr_final: 0.5, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { target_bps: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { grad_clip: -1.0, ..TrainConfig::default() }.validate().is_err());
        let desk = TrainConfig::desk_scale();
        assert!(desk.validate().is_ok());
        assert_eq!((desk.stage1_epochs, desk.stage2_epochs, desk.channels), (10, 20, 16));
    }

    #[test]
    fn clipping_scales_jointly() {
        let (mut a, mut b) = (vec![3.0f32, 0.0], vec![4.0f32]);
        assert_eq!(clip_global_norm(vec![&mut a, &mut b], 10.0), 5.0);
        assert_eq!((a.as_slice(), b.as_slice()), (&[3.0, 0.0][..], &[4.0][..]));
        assert_eq!(clip_global_norm(vec![&mut a, &mut b], 1.0), 5.0);
        assert!((a[0] - 0.6).abs() < 1e-7 && (b[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn desk_entropy_steps_span_full_range() {
        let (full, desk) = (TrainConfig::default(), TrainConfig::desk_scale());
        let span = |c: &TrainConfig| c.tau_change * c.stage2_epochs as f64;
        assert!((span(&desk) - span(&full)).abs() < 1e-12);
        assert_eq!(desk.tau_initial, full.tau_initial);
    }
}
