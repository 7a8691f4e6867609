//! Acceptance criteria for the codec, one check per criterion.
//!
//! Runs without the libtest harness so every criterion prints a PASS/FAIL
//! line even when all succeed. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p nsc-core --test acceptance -- 1 3`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nsc_core::audio::{self, SplitCounts};
use nsc_core::coder::{self, FrequencyTable, StreamMeta};
use nsc_core::framing::{extract_windows, overlap_add, FrameConfig};
use nsc_core::mfcc::{Mfcc, MfccConfig};
use nsc_core::nn::gradcheck::{numeric_grad, relative_error};
use nsc_core::nn::{subpixel_downsample, subpixel_upsample, Conv1d, Prelu, Tensor};
use nsc_core::objective::{self, bitrate_estimate, entropy_bits, quantization_penalty};
use nsc_core::quantizer::{harden, Quantizer};
use nsc_core::trainer::{entropy_controller, in_target_band, TrainConfig, Trainer};
use nsc_core::{codec, fixture, Model};

type Check = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error over `instances` random draws of `case`, each
/// returning `(analytic, numeric)` gradients.
fn worst(instances: u64, mut case: impl FnMut(&mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>)) -> f64 {
    (0..instances)
        .map(|i| {
            let (a, n) = case(&mut rng(1000 + i));
            relative_error(&a, &n)
        })
        .fold(0.0, f64::max)
}

fn gradient_suite() -> Check {
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut errors: Vec<(&str, f64)> = Vec::new();

    errors.push(("conv1d", worst(10, |r| {
        let stride = if r.gen_bool(0.5) { 1 } else { 2 };
        let (b, cin, cout, len) = (2, r.gen_range(1..4), r.gen_range(1..4), r.gen_range(9..24));
        let conv = Conv1d::<f64>::init(cin, cout, 9, stride, r);
        let mut conv = conv;
        conv.bias = uniform(r, cout, -0.5, 0.5);
        let x = uniform(r, b * cin * len, -1.0, 1.0);
        let w = uniform(r, b * cout * conv.out_len(len), -1.0, 1.0);
        let xt = Tensor::from_vec(b, cin, len, x.clone()).unwrap();
        let gout = Tensor::from_vec(b, cout, conv.out_len(len), w.clone()).unwrap();
        let mut grads = conv.zeros_like();
        let gin = conv.backward(&xt, &gout, &mut grads).unwrap();
        let loss_x = |v: &[f64]| dot(conv.forward(&Tensor::from_vec(b, cin, len, v.to_vec()).unwrap()).unwrap().data(), &w);
        let mut analytic = gin.into_data();
        let mut numeric = numeric_grad(&x, loss_x);
        analytic.extend(&grads.weight);
        numeric.extend(numeric_grad(&conv.weight, |v| {
            let c = Conv1d { weight: v.to_vec(), ..conv.clone() };
            dot(c.forward(&xt).unwrap().data(), &w)
        }));
        analytic.extend(&grads.bias);
        numeric.extend(numeric_grad(&conv.bias, |v| {
            let c = Conv1d { bias: v.to_vec(), ..conv.clone() };
            dot(c.forward(&xt).unwrap().data(), &w)
        }));
        (analytic, numeric)
    })));

    errors.push(("prelu", worst(10, |r| {
        let (b, c, len) = (2, 3, 16);
        let mut act = Prelu::<f64>::new(c);
        act.slope = uniform(r, c, -0.5, 0.8);
        // Keep inputs away from the kink at zero.
        let x: Vec<f64> = (0..b * c * len)
            .map(|_| {
                let v: f64 = r.gen_range(0.05..1.0);
                if r.gen_bool(0.5) { v } else { -v }
            })
            .collect();
        let w = uniform(r, x.len(), -1.0, 1.0);
        let xt = Tensor::from_vec(b, c, len, x.clone()).unwrap();
        let mut grads = act.zeros_like();
        let gin = act.backward(&xt, &Tensor::from_vec(b, c, len, w.clone()).unwrap(), &mut grads).unwrap();
        let mut analytic = gin.into_data();
        let mut numeric = numeric_grad(&x, |v| dot(act.forward(&Tensor::from_vec(b, c, len, v.to_vec()).unwrap()).unwrap().data(), &w));
        analytic.extend(&grads.slope);
        numeric.extend(numeric_grad(&act.slope, |s| {
            let a = Prelu { slope: s.to_vec() };
            dot(a.forward(&xt).unwrap().data(), &w)
        }));
        (analytic, numeric)
    })));

    errors.push(("subpixel", worst(10, |r| {
        let (b, c, len) = (2, 2 * r.gen_range(1..4), r.gen_range(3..12));
        let x = uniform(r, b * c * len, -1.0, 1.0);
        let w = uniform(r, x.len(), -1.0, 1.0);
        let g = Tensor::from_vec(b, c / 2, 2 * len, w.clone()).unwrap();
        let analytic = subpixel_downsample(&g).unwrap().into_data();
        let numeric = numeric_grad(&x, |v| {
            dot(subpixel_upsample(&Tensor::from_vec(b, c, len, v.to_vec()).unwrap()).unwrap().data(), &w)
        });
        (analytic, numeric)
    })));

    // Quantizer at moderate temperatures so finite differences resolve the softmax.
    let quantizer_case = |r: &mut ChaCha8Rng, through_values: bool| {
        let n = r.gen_range(3..9);
        let mut bins = uniform(r, n, -1.0, 1.0);
        bins.sort_by(f64::total_cmp);
        let q = Quantizer::<f64>::new(bins, r.gen_range(1.0..5.0));
        let codes = uniform(r, 6, -1.2, 1.2);
        let (wa, wv) = (uniform(r, codes.len() * n, -1.0, 1.0), uniform(r, codes.len(), -1.0, 1.0));
        let (ga, gv) = if through_values { (vec![0.0; wa.len()], wv.clone()) } else { (wa.clone(), vec![0.0; wv.len()]) };
        let loss = |q: &Quantizer<f64>, c: &[f64]| {
            let s = q.soft_quantize_all(c);
            if through_values { dot(&q.dequantize_all(&s), &wv) } else { dot(&s, &wa) }
        };
        let s = q.soft_quantize_all(&codes);
        let g = q.backward(&codes, &s, &ga, &gv);
        let mut analytic = g.codes.clone();
        let mut numeric = numeric_grad(&codes, |c| loss(&q, c));
        analytic.extend(&g.bins);
        numeric.extend(numeric_grad(&q.bins, |b| loss(&Quantizer { bins: b.to_vec(), ..q.clone() }, &codes)));
        analytic.push(g.log_sigma);
        numeric.extend(numeric_grad(&[q.log_sigma], |ls| loss(&Quantizer { log_sigma: ls[0], ..q.clone() }, &codes)));
        (analytic, numeric)
    };
    errors.push(("soft_quantize", worst(10, |r| quantizer_case(r, false))));
    errors.push(("dequantize", worst(10, |r| quantizer_case(r, true))));

    errors.push(("mse", worst(10, |r| {
        let n = r.gen_range(8..64);
        let (x, y) = (uniform(r, n, -1.0, 1.0), uniform(r, n, -1.0, 1.0));
        let analytic = objective::mse_grad(&x, &y);
        (analytic, numeric_grad(&y, |v| objective::mse_loss(&x, v).unwrap()))
    })));

    let mfcc = Mfcc::<f64>::new(&MfccConfig::default());
    errors.push(("perceptual_loss", worst(10, |r| {
        let (x, y) = (uniform(r, 512, -0.5, 0.5), uniform(r, 512, -0.5, 0.5));
        let (_, analytic) = mfcc.perceptual_loss_grad(&x, &y);
        (analytic, numeric_grad(&y, |v| mfcc.perceptual_loss(&x, v)))
    })));

    let assignments = |r: &mut ChaCha8Rng, symbols: usize, n: usize| -> Vec<f64> {
        (0..symbols)
            .flat_map(|_| {
                let raw = uniform(r, n, 0.05, 1.0);
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(move |v| v / sum)
            })
            .collect()
    };
    errors.push(("quantization_penalty", worst(10, |r| {
        let n = r.gen_range(2..9);
        let s = assignments(r, 5, n);
        (objective::quantization_penalty_grad(&s, n), numeric_grad(&s, |v| quantization_penalty(v, n)))
    })));
    errors.push(("entropy_estimate", worst(10, |r| {
        let n = r.gen_range(2..9);
        let s = assignments(r, 5, n);
        (objective::entropy_grad(&s, n), numeric_grad(&s, |v| objective::entropy_estimate(v, n).1))
    })));

    let elapsed = start.elapsed().as_secs_f64();
    let detail = errors
        .iter()
        .map(|(name, e)| format!("{name} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    let detail = format!("max relative error: {detail}; {elapsed:.1}s");
    if errors.iter().all(|&(_, e)| e < TOL) && elapsed < 120.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn quantizer_invariants() -> Check {
    let mut r = rng(2);
    let mut bins = uniform(&mut r, 32, -2.0, 2.0);
    bins.sort_by(f64::total_cmp);
    let q = Quantizer::<f64>::new(bins.clone(), 300.0);
    let mut worst_sum: f64 = 0.0;
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let x: f64 = r.gen_range(-2.5..2.5);
        let s = q.soft_quantize(x);
        worst_sum = worst_sum.max((s.iter().sum::<f64>() - 1.0).abs());
        let brute = (0..bins.len())
            .min_by(|&a, &b| (x - bins[a]).abs().total_cmp(&(x - bins[b]).abs()))
            .unwrap();
        if harden(&s) != brute {
            mismatches += 1;
        }
    }
    let sigmas: Vec<f64> = (0..20).map(|i| 0.1 * 1.6f64.powi(i)).collect();
    let mut monotone = true;
    for _ in 0..200 {
        let x: f64 = r.gen_range(-2.5..2.5);
        let peaks: Vec<f64> = sigmas
            .iter()
            .map(|&sg| {
                let q = Quantizer::<f64>::new(bins.clone(), sg);
                q.soft_quantize(x).into_iter().fold(0.0, f64::max)
            })
            .collect();
        monotone &= peaks.windows(2).all(|w| w[1] >= w[0] - 1e-15);
    }
    let detail = format!("max |sum S - 1| = {worst_sum:.1e}, harden mismatches {mismatches}/10000, max S monotone in sigma: {monotone}");
    if worst_sum < 1e-12 && mismatches == 0 && monotone {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn closed_form_losses() -> Check {
    let n = 32;
    let one_hot: Vec<f64> = (0..256).flat_map(|i| (0..n).map(move |j| if j == i % n { 1.0 } else { 0.0 })).collect();
    let flat = vec![1.0 / n as f64; 256 * n];
    let q_hot = quantization_penalty(&one_hot, n);
    let q_flat = quantization_penalty(&flat, n);
    let bits = entropy_bits(&vec![1.0 / n as f64; n]);
    let rate = bitrate_estimate(5.0);
    let detail = format!("Q(one-hot) = {q_hot:.2e}, Q(uniform) = {q_flat:.9}, H(uniform) = {bits:.12}, rate(5 bits) = {rate:.4}");
    let ok = q_hot.abs() < 1e-12
        && (q_flat - (32f64.sqrt() - 1.0)).abs() < 1e-6
        && (bits - 5.0).abs() < 1e-9
        && (rate - 42666.67).abs() < 0.01;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn framing_identity() -> Check {
    let mut r = rng(4);
    let cfg = FrameConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = r.gen_range(1..=100_000);
        let x: Vec<f32> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y = overlap_add(&extract_windows(&x, &cfg), &cfg).map_err(|e| e.to_string())?;
        if y.len() != len {
            return Err(format!("length {len} came back as {}", y.len()));
        }
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    let detail = format!("max per-sample error {worst:.1e} over 100 signals");
    if worst <= 1e-7 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn coder_checks() -> Check {
    let mut r = rng(5);
    for i in 0..1000 {
        let n = r.gen_range(2..64);
        // Skewed random histograms, some with near-empty bins that get the floor count.
        let raw: Vec<f64> = (0..n).map(|_| r.gen::<f64>().powi(4)).collect();
        let sum: f64 = raw.iter().sum();
        let h: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let table = FrequencyTable::from_histogram(&h).map_err(|e| e.to_string())?;
        let len = r.gen_range(0..2000);
        let symbols: Vec<usize> = (0..len).map(|_| r.gen_range(0..n)).collect();
        let bytes = coder::range_encode(&symbols, &table).map_err(|e| e.to_string())?;
        let back = coder::range_decode(&bytes, len, &table).map_err(|e| e.to_string())?;
        if back != symbols {
            return Err(format!("sequence {i} did not round-trip"));
        }
    }

    let weights: Vec<f64> = (0..32).map(|i| (-0.25 * i as f64).exp()).collect();
    let total: f64 = weights.iter().sum();
    let h: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let table = FrequencyTable::from_histogram(&h).map_err(|e| e.to_string())?;
    let cdf: Vec<f64> = h.iter().scan(0.0, |acc, p| {
        *acc += p;
        Some(*acc)
    }).collect();
    let symbols: Vec<usize> = (0..100_000)
        .map(|_| {
            let u: f64 = r.gen();
            cdf.iter().position(|&c| u < c).unwrap_or(31)
        })
        .collect();
    let bytes = coder::range_encode(&symbols, &table).map_err(|e| e.to_string())?;
    let rate = bytes.len() as f64 * 8.0 / symbols.len() as f64;
    let entropy = table.entropy();
    let rel = (rate / entropy - 1.0).abs();

    let meta = StreamMeta {
        sample_rate: 16000,
        window_len: 512,
        overlap: 32,
        num_windows: 7,
        original_len: 3100,
    };
    let stream_symbols: Vec<usize> = (0..meta.num_symbols()).map(|_| r.gen_range(0..32)).collect();
    let packed = coder::pack_bitstream(&stream_symbols, &meta, &table).map_err(|e| e.to_string())?;
    let (s2, m2, t2) = coder::unpack_bitstream(&packed, 32).map_err(|e| e.to_string())?;
    let repacked = coder::pack_bitstream(&s2, &m2, &t2).map_err(|e| e.to_string())?;
    let header_ok = m2 == meta && t2 == table && s2 == stream_symbols && repacked == packed;

    let detail = format!(
        "1000 sequences lossless; rate {rate:.4} vs entropy {entropy:.4} bits/symbol ({:.2}%); header round trip {}",
        rel * 100.0,
        if header_ok { "exact" } else { "differs" }
    );
    if rel < 0.02 && header_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn controller_convergence() -> Check {
    let cfg = TrainConfig::default();
    // Plant: bitrate falls by 20 kbps per unit of entropy weight.
    let plant = |lambda: f64| 30_000.0 - 20_000.0 * lambda;
    let mut report = Vec::new();
    let mut ok = true;
    for target in [9000.0, 16000.0, 20000.0, 24000.0] {
        let cfg = TrainConfig { target_bps: target, ..cfg.clone() };
        let mut lambda = cfg.tau_initial;
        let mut entered = None;
        let mut stayed = true;
        for epoch in 0..200 {
            let rate = plant(lambda);
            let inside = in_target_band(rate, &cfg);
            if inside && entered.is_none() {
                entered = Some(epoch);
            }
            if entered.is_some() && !inside {
                stayed = false;
            }
            lambda = entropy_controller(rate, lambda, &cfg);
        }
        let fine = stayed && entered.is_some_and(|e| e < 60);
        ok &= fine;
        report.push(format!("{target:.0}: entered at epoch {entered:?}, stayed {stayed}"));
    }
    let detail = report.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Seconds of audio per generated corpus file; long enough that the fixed
/// stream header is a small share of the measured rate.
const DESK_FILE_SECONDS: f64 = 5.0;

fn desk_scale_training() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    fixture::write_corpus(&corpus, 64, DESK_FILE_SECONDS, 42).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::desk_scale();
    let target = cfg.target_bps;
    let (trainer, split) = Trainer::from_corpus(&corpus, cfg.clone()).map_err(|e| e.to_string())?;
    let outcome = trainer.run().map_err(|e| e.to_string())?;
    let minutes = start.elapsed().as_secs_f64() / 60.0;

    let first = &outcome.log[0].validation;
    let last = &outcome.log.last().ok_or("empty training log")?.validation;
    let mse_ratio = last.mse / first.mse;

    // The delivered model's own validation estimate, against bytes actually written.
    let model = outcome.model();
    let delivered = outcome
        .log
        .iter()
        .rfind(|row| row.checkpointed)
        .unwrap_or_else(|| outcome.log.last().unwrap());
    let (mut bytes, mut seconds) = (0usize, 0.0f64);
    for path in &split.validation {
        let signal = audio::read_wav(path).map_err(|e| e.to_string())?;
        bytes += codec::encode(model, &signal).map_err(|e| e.to_string())?.bytes.len();
        seconds += signal.duration_secs();
    }
    let measured = codec::measured_bps(bytes, seconds);
    let estimate = delivered.validation.estimated_bps;
    let rate_gap = (measured / estimate - 1.0).abs();

    let checks = [
        mse_ratio < 0.5,
        (last.estimated_bps - target).abs() <= 450.0,
        rate_gap <= 0.05,
        minutes < 30.0,
    ];
    let detail = format!(
        "val MSE {:.5} -> {:.5} (ratio {mse_ratio:.3}); final estimate {:.0} bps (target {target:.0} ± 450); \
         delivered epoch {} measured {measured:.0} vs estimate {estimate:.0} bps ({:.1}%); {minutes:.1} min",
        first.mse,
        last.mse,
        last.estimated_bps,
        delivered.epoch,
        rate_gap * 100.0
    );
    if checks.iter().all(|&c| c) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn realtime_bench() -> Check {
    let model = Model::untrained(TrainConfig::default()).map_err(|e| e.to_string())?;
    let mut r = rng(8);
    let window: Vec<f32> = (0..512).map(|_| r.gen_range(-0.5..0.5)).collect();
    let b = codec::bench_windows(&model, &window, 50, 1000).map_err(|e| e.to_string())?;
    let detail = format!(
        "C=32: encode {:.2} ms, decode {:.2} ms, combined {:.2} ms mean / {:.2} ms p95 per window",
        b.encode.mean_ms, b.decode.mean_ms, b.combined.mean_ms, b.combined.p95_ms
    );
    if b.combined.mean_ms < 30.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    fixture::write_corpus(&corpus, 10, 1.0, 9).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        stage1_epochs: 2,
        stage2_epochs: 2,
        channels: 4,
        residual_blocks: 1,
        batch_size: 32,
        split: SplitCounts::new(8, 2, 0),
        ..TrainConfig::desk_scale()
    };
    let train = |threads: usize| -> Result<Vec<u8>, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        pool.install(|| {
            let (t, _) = Trainer::from_corpus(&corpus, cfg.clone()).map_err(|e| e.to_string())?;
            Ok(t.run().map_err(|e| e.to_string())?.model().to_bytes())
        })
    };
    let (a, b, c) = (train(1)?, train(1)?, train(3)?);
    let model = Model::from_bytes(&a).map_err(|e| e.to_string())?;
    let signal = audio::read_wav(corpus.join("utt_000.wav")).map_err(|e| e.to_string())?;
    let e1 = codec::encode(&model, &signal).map_err(|e| e.to_string())?.bytes;
    let e2 = codec::encode(&model, &signal).map_err(|e| e.to_string())?.bytes;
    let detail = format!(
        "checkpoints identical: {} (single thread), {} (three threads); encodes identical: {}",
        a == b,
        a == c,
        e1 == e2
    );
    if a == b && a == c && e1 == e2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Check); 9] = [
        (1, "gradient suite", gradient_suite),
        (2, "quantizer invariants", quantizer_invariants),
        (3, "closed-form loss values", closed_form_losses),
        (4, "framing identity", framing_identity),
        (5, "range coder", coder_checks),
        (6, "controller convergence", controller_convergence),
        (7, "desk-scale training", desk_scale_training),
        (8, "realtime bench", realtime_bench),
        (9, "determinism", determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        match check() {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
