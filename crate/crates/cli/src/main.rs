use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nsc_core::audio::{self, SplitCounts};
use nsc_core::trainer::{self, TrainConfig, Trainer};
use nsc_core::{codec, Model};

#[derive(Parser)]
#[command(name = "nsc", version, about = "Learned wideband speech codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of 16 kHz mono WAV files.
    Train(TrainArgs),
    /// Compress a WAV file into an .nsc bitstream.
    Encode(CodecArgs),
    /// Reconstruct a WAV file from an .nsc bitstream.
    Decode(CodecArgs),
    /// Encode and decode every file of a corpus and report quality and rate.
    Eval(EvalArgs),
    /// Time single-window encode and decode on one thread.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 9000.0)]
    target_bps: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Small network and short schedule for a 64-file corpus.
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    epochs_stage1: Option<usize>,
    #[arg(long)]
    epochs_stage2: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Files used for training, validation and test.
    #[arg(long, num_args = 3, value_names = ["TRAIN", "VALIDATION", "TEST"])]
    split: Option<Vec<usize>>,
}

#[derive(Args)]
struct CodecArgs {
    #[arg(long)]
    model: PathBuf,
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Also write the report as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the codec and compare each file with itself.
    #[arg(long)]
    bypass: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Trained model; without one a freshly initialized network is timed.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// A failure reported as `error[kind]: message` on one line.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            kind,
            message: message.into(),
        }
    }
}

impl From<nsc_core::Error> for Failure {
    fn from(e: nsc_core::Error) -> Self {
        Self::new(1, e.kind(), e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message.replace(['\n', '\r'], " ");
        write!(f, "error[{}]: {msg}", self.kind)
    }
}

type Outcome = Result<(), Failure>;

fn require_dir(path: &Path) -> Outcome {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::new(2, "not_found", format!("corpus directory {} does not exist", path.display())))
    }
}

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::new(2, "not_found", format!("file {} does not exist", path.display())))
    }
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    require_file(path)?;
    Ok(Model::load(path)?)
}

/// Writes through a sibling temporary file so a failure leaves nothing at `path`.
fn write_atomically(path: &Path, write: impl FnOnce(&Path) -> nsc_core::Result<()>) -> Outcome {
    let name = path.file_name().map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    let tmp = path.with_file_name(format!(".{name}.partial"));
    let result = write(&tmp).and_then(|()| std::fs::rename(&tmp, path).map_err(Into::into));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn train(args: TrainArgs) -> Outcome {
    require_dir(&args.corpus)?;
    let mut cfg = if args.desk_scale { TrainConfig::desk_scale() } else { TrainConfig::default() };
    cfg.target_bps = args.target_bps;
    cfg.seed = args.seed;
    if let Some(v) = args.channels {
        cfg.channels = v;
    }
    if let Some(v) = args.blocks {
        cfg.residual_blocks = v;
    }
    if let Some(v) = args.epochs_stage1 {
        cfg.stage1_epochs = v;
    }
    if let Some(v) = args.epochs_stage2 {
        cfg.stage2_epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.split {
        cfg.split = SplitCounts::new(v[0], v[1], v[2]);
    }
    if !(cfg.target_bps > 0.0) {
        return Err(Failure::new(2, "invalid_config", "--target-bps must be positive"));
    }
    let (trainer, split) = Trainer::from_corpus(&args.corpus, cfg)?;
    log::info!(
        "{} training, {} validation, {} test files",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    let outcome = trainer.run()?;
    if outcome.best.is_none() {
        log::warn!("no epoch reached the target band; writing the final model");
    }
    let model = outcome.model();
    write_atomically(&args.out, |p| model.save(p))?;
    let log_path = args.out.with_extension("csv");
    write_atomically(&log_path, |p| Ok(std::fs::write(p, trainer::log_to_csv(&outcome.log))?))?;
    let best = outcome.log.iter().rfind(|r| r.checkpointed).or(outcome.log.last());
    println!(
        "wrote {} (epoch {}, estimated {:.0} bps, target {:.0} bps) and {}",
        args.out.display(),
        best.map_or(0, |r| r.epoch),
        best.map_or(0.0, |r| r.validation.estimated_bps),
        model.target_bps(),
        log_path.display()
    );
    Ok(())
}

fn encode(args: CodecArgs) -> Outcome {
    let model = load_model(&args.model)?;
    require_file(&args.input)?;
    let signal = audio::read_wav(&args.input)?;
    let enc = codec::encode(&model, &signal)?;
    write_atomically(&args.out, |p| Ok(std::fs::write(p, &enc.bytes)?))?;
    log::debug!("encoded symbols: {:?}", &enc.symbols[..enc.symbols.len().min(16)]);
    println!(
        "wrote {}: {} bytes, {:.3} kbps measured, {:.3} kbps estimated",
        args.out.display(),
        enc.bytes.len(),
        enc.measured_bps() / 1000.0,
        enc.estimated_bps / 1000.0
    );
    Ok(())
}

fn decode(args: CodecArgs) -> Outcome {
    let model = load_model(&args.model)?;
    require_file(&args.input)?;
    let bytes = std::fs::read(&args.input).map_err(nsc_core::Error::from)?;
    let dec = codec::decode(&model, &bytes)?;
    log::debug!("decoded symbols: {:?}", &dec.symbols[..dec.symbols.len().min(16)]);
    write_atomically(&args.out, |p| audio::write_wav(p, &dec.signal))?;
    println!(
        "wrote {}: {} samples, {:.3} s",
        args.out.display(),
        dec.signal.len(),
        dec.signal.duration_secs()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Outcome {
    let model = load_model(&args.model)?;
    require_dir(&args.corpus)?;
    let report = codec::evaluate_dir(&model, &args.corpus, args.bypass)?;
    println!(
        "{:<40} {:>9} {:>11} {:>13} {:>13}",
        "file", "snr_db", "perceptual", "measured_bps", "estimated_bps"
    );
    for r in report.files.iter().chain(report.mean().as_ref()) {
        let name = r.path.file_name().map_or_else(|| r.path.display().to_string(), |n| n.to_string_lossy().into_owned());
        println!(
            "{name:<40} {:>9.3} {:>11.5} {:>13.1} {:>13.1}",
            r.snr_db, r.perceptual, r.measured_bps, r.estimated_bps
        );
    }
    for (path, e) in &report.failures {
        eprintln!("error[{}]: {}: {}", e.kind(), path.display(), e.to_string().replace('\n', " "));
    }
    if let Some(out) = &args.out {
        write_atomically(out, |p| Ok(std::fs::write(p, report.to_csv())?))?;
    }
    if report.files.is_empty() && !report.failures.is_empty() {
        return Err(Failure::new(1, "eval_failed", "every file failed"));
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Outcome {
    let model = match &args.model {
        Some(p) => load_model(p)?,
        None => Model::untrained(TrainConfig {
            channels: args.channels,
            residual_blocks: args.blocks,
            seed: args.seed,
            ..TrainConfig::default()
        })?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let window: Vec<f32> = (0..model.frame.window_len).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let r = codec::bench_windows(&model, &window, args.warmup, args.iterations.max(1))?;
    println!("{} iterations, C={}, one thread", r.iterations, model.network.spec().channels());
    println!("{:<10} {:>10} {:>10}", "stage", "mean_ms", "p95_ms");
    for (name, t) in [("encode", r.encode), ("decode", r.decode), ("combined", r.combined)] {
        println!("{name:<10} {:>10.3} {:>10.3}", t.mean_ms, t.p95_ms);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NSC_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code)
        }
    }
}
